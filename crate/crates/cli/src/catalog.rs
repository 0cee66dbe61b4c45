//! Scenarios shipped with the binary.

pub struct Bundled {
    pub name: &'static str,
    pub description: &'static str,
    pub config: &'static str,
}

macro_rules! bundled {
    ($($name:literal => $desc:literal),* $(,)?) => {
        &[$(Bundled { name: $name, description: $desc, config: include_str!(concat!("../scenarios/", $name, ".json")) }),*]
    };
}

/// Sorted by name.
pub const BUNDLED: &[Bundled] = bundled! {
    "minimize-s2-geodesic" => "director bar pinned at two points of S2 relaxes onto the great circle",
    "noether-wave" => "integrated S1 order-parameter wave and convergence of its Noether residual",
    "proposition1-bar" => "two-phase bar: closed-form jump solution and traction-shift response",
    "remark4-circle" => "Cauchy family on the circle stays below the real-line separation",
    "remark4-real-line" => "integral separation of the power family against 9(1/(n+1) - 1/(m+1))",
    "remark5-beam" => "integral distance grows with beam length while the sup distance stays fixed",
    "theorem2-sphere-tension" => "sphere carrying constant surface tension closes m.[P]m = 2 sigma/R",
};

pub fn find(name: &str) -> Option<&'static Bundled> {
    BUNDLED.iter().find(|b| b.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn catalog_is_sorted_and_parses() {
        assert!(BUNDLED.windows(2).all(|w| w[0].name < w[1].name));
        for b in BUNDLED {
            let s = Scenario::parse(b.config, b.name).unwrap();
            assert_eq!(s.name, b.name);
        }
    }
}
