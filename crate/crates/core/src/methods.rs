//! The twelve confidence measures and the score rows they produce.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::blackbox::BlackboxMethod;
use crate::whitebox::WhiteboxMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DegJ,
    DegE,
    DegC,
    EccJ,
    EccE,
    EccC,
    Sl,
    Perplexity,
    TokenSar,
    Csl,
    CslNext,
    PTrue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Blackbox(BlackboxMethod),
    Whitebox(WhiteboxMethod),
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::DegJ,
        Method::DegE,
        Method::DegC,
        Method::EccJ,
        Method::EccE,
        Method::EccC,
        Method::Sl,
        Method::Perplexity,
        Method::TokenSar,
        Method::Csl,
        Method::CslNext,
        Method::PTrue,
    ];

    /// Stable identifier, also the ranking tie-break key.
    pub fn id(self) -> &'static str {
        match self {
            Method::DegJ => "deg_j",
            Method::DegE => "deg_e",
            Method::DegC => "deg_c",
            Method::EccJ => "ecc_j",
            Method::EccE => "ecc_e",
            Method::EccC => "ecc_c",
            Method::Sl => "sl",
            Method::Perplexity => "perplexity",
            Method::TokenSar => "token_sar",
            Method::Csl => "csl",
            Method::CslNext => "csl_next",
            Method::PTrue => "p_true",
        }
    }

    /// Name used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::DegJ => "Deg(J)",
            Method::DegE => "Deg(E)",
            Method::DegC => "Deg(C)",
            Method::EccJ => "Ecc(J)",
            Method::EccE => "Ecc(E)",
            Method::EccC => "Ecc(C)",
            Method::Sl => "SL",
            Method::Perplexity => "Perplexity",
            Method::TokenSar => "TokenSAR",
            Method::Csl => "CSL",
            Method::CslNext => "CSL-Next",
            Method::PTrue => "P(true)",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Method::DegJ => Family::Blackbox(BlackboxMethod::DegJ),
            Method::DegE => Family::Blackbox(BlackboxMethod::DegE),
            Method::DegC => Family::Blackbox(BlackboxMethod::DegC),
            Method::EccJ => Family::Blackbox(BlackboxMethod::EccJ),
            Method::EccE => Family::Blackbox(BlackboxMethod::EccE),
            Method::EccC => Family::Blackbox(BlackboxMethod::EccC),
            Method::Sl => Family::Whitebox(WhiteboxMethod::Sl),
            Method::Perplexity => Family::Whitebox(WhiteboxMethod::Perplexity),
            Method::TokenSar => Family::Whitebox(WhiteboxMethod::TokenSar),
            Method::Csl => Family::Whitebox(WhiteboxMethod::Csl),
            Method::CslNext => Family::Whitebox(WhiteboxMethod::CslNext),
            Method::PTrue => Family::Whitebox(WhiteboxMethod::PTrue),
        }
    }

    pub fn is_blackbox(self) -> bool {
        matches!(self.family(), Family::Blackbox(_))
    }
}

impl From<BlackboxMethod> for Method {
    fn from(m: BlackboxMethod) -> Self {
        Method::ALL
            .into_iter()
            .find(|x| x.family() == Family::Blackbox(m))
            .expect("every black-box method is listed")
    }
}

impl From<WhiteboxMethod> for Method {
    fn from(m: WhiteboxMethod) -> Self {
        Method::ALL
            .into_iter()
            .find(|x| x.family() == Family::Whitebox(m))
            .expect("every white-box method is listed")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Confidence of one method for one injected option (or, in the baseline
/// pipeline, one sampled response).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub item_id: String,
    pub option_index: usize,
    pub method: Method,
    pub confidence: f64,
}
