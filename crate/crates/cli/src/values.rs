//! Flag and config value types that have no library counterpart.

use std::fmt;
use std::str::FromStr;

use semmatch::evaluation::BoxSide;
use semmatch::losses::{CycleStage, SampleMode};

/// `WxH`, or `none` to keep the native size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resize(pub Option<(usize, usize)>);

impl FromStr for Resize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(Self(None));
        }
        let (w, h) = s.split_once('x').ok_or("expected WxH or none")?;
        let parse = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or("extents must be positive integers")
        };
        Ok(Self(Some((parse(w)?, parse(h)?))))
    }
}

impl fmt::Display for Resize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some((w, h)) => write!(f, "{w}x{h}"),
            None => f.write_str("none"),
        }
    }
}

/// Comma-separated PCK thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct Taus(pub Vec<f64>);

impl FromStr for Taus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if v.is_empty() || v.iter().any(|t| !(*t > 0.0)) {
            return Err("thresholds must be positive".into());
        }
        Ok(Self(v))
    }
}

impl fmt::Display for Taus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

macro_rules! keyword {
    ($name:ident($inner:ty) { $($word:literal => $val:expr),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub struct $name(pub $inner);

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($word => Ok(Self($val)),)+
                    _ => Err(format!("expected one of: {}", [$($word),+].join(", "))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if self.0 == $val { return f.write_str($word); })+
                unreachable!("every variant has a keyword")
            }
        }
    };
}

keyword!(BoxSideArg(BoxSide) { "target" => BoxSide::Target, "source" => BoxSide::Source });
keyword!(SampleArg(SampleMode) { "lattice" => SampleMode::Lattice, "random" => SampleMode::Random });
keyword!(StageArg(CycleStage) { "full" => CycleStage::Full, "affine" => CycleStage::AffineOnly });
keyword!(FeatureKind(bool) { "descriptor" => false, "dsmf" => true });

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_round_trip_through_text() {
        for s in ["none", "240x180"] {
            assert_eq!(s.parse::<Resize>().unwrap().to_string(), s);
        }
        assert_eq!("0.05,0.1".parse::<Taus>().unwrap().0, vec![0.05, 0.1]);
        assert_eq!("affine".parse::<StageArg>().unwrap().to_string(), "affine");
        assert_eq!("dsmf".parse::<FeatureKind>().unwrap(), FeatureKind(true));
    }

    #[test]
    fn malformed_values_are_rejected() {
        assert!("240".parse::<Resize>().is_err());
        assert!("0x10".parse::<Resize>().is_err());
        assert!("0.1,-1".parse::<Taus>().is_err());
        assert!("middle".parse::<BoxSideArg>().is_err());
    }
}
