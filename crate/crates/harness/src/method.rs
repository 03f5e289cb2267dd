//! Model selection methods addressable by name in configs and records.

use std::fmt;
use std::str::FromStr;

use netcv_core::criteria::CriterionKind;
use netcv_core::folds::FoldScheme;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cv { scheme: FoldScheme, v: usize },
    Criterion(CriterionKind),
    /// Oracle: the K whose full-data fit is closest to the generating P.
    TrueRisk,
    Modularity,
    Infomap,
}

/// Coarse grouping used by the report tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cv,
    Ic,
    Cd,
    Oracle,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Cv => "cv",
            Family::Ic => "ic",
            Family::Cd => "cd",
            Family::Oracle => "oracle",
        }
    }
}

impl Method {
    pub fn family(&self) -> Family {
        match self {
            Method::Cv { .. } => Family::Cv,
            Method::Criterion(_) => Family::Ic,
            Method::TrueRisk => Family::Oracle,
            Method::Modularity | Method::Infomap => Family::Cd,
        }
    }

    /// Whether selection scans a K range (and so is capped at K_max).
    pub fn scans_k(&self) -> bool {
        !matches!(self, Method::Modularity | Method::Infomap)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Cv { scheme, v } => write!(f, "{}-{}", scheme.name(), v),
            Method::Criterion(kind) => f.write_str(kind.name()),
            Method::TrueRisk => f.write_str("truerisk"),
            Method::Modularity => f.write_str("modularity"),
            Method::Infomap => f.write_str("infomap"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "truerisk" | "true-risk" => return Ok(Method::TrueRisk),
            "modularity" => return Ok(Method::Modularity),
            "infomap" => return Ok(Method::Infomap),
            _ => {}
        }
        if let Ok(kind) = s.parse::<CriterionKind>() {
            return Ok(Method::Criterion(kind));
        }
        let (scheme, v) = s
            .rsplit_once('-')
            .ok_or_else(|| format!("unknown method `{s}`"))?;
        let scheme: FoldScheme = scheme.parse().map_err(|_| format!("unknown method `{s}`"))?;
        let v: usize = v.parse().map_err(|_| format!("bad fold count in `{s}`"))?;
        if v < 2 {
            return Err(format!("`{s}`: need at least 2 folds"));
        }
        Ok(Method::Cv { scheme, v })
    }
}

/// Expands method names into concrete methods. A bare scheme name (`latin`,
/// `random`, `ncv`) stands for that scheme at every fold count in `folds`.
pub fn expand_methods(names: &[String], folds: &[usize]) -> Result<Vec<Method>, String> {
    let mut out = Vec::new();
    for name in names {
        let methods = match name.trim().parse::<FoldScheme>() {
            Ok(scheme) => folds.iter().map(|&v| Method::Cv { scheme, v }).collect(),
            Err(_) => vec![name.parse::<Method>()?],
        };
        for m in methods {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in ["latin-10", "random-3", "ncv-5", "aic", "bic", "loglik", "truerisk", "modularity", "infomap"] {
            let m: Method = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert!("latin-1".parse::<Method>().is_err());
        assert!("kmeans".parse::<Method>().is_err());
    }

    #[test]
    fn bare_schemes_expand() {
        let names: Vec<String> = ["latin", "aic", "latin-5"].iter().map(|s| s.to_string()).collect();
        let ms = expand_methods(&names, &[3, 5]).unwrap();
        let shown: Vec<String> = ms.iter().map(Method::to_string).collect();
        assert_eq!(shown, ["latin-3", "latin-5", "aic"]);
    }
}
