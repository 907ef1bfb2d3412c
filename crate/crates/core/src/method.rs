use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which conditional covariance estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Nw,
    Forest,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nw => "nw",
            Method::Forest => "forest",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nw" => Ok(Method::Nw),
            "forest" | "rf" => Ok(Method::Forest),
            _ => Err(Error::invalid(format!("unknown method '{s}' (expected nw or forest)"))),
        }
    }
}
