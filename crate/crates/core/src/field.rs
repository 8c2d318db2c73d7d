//! Physical field and problem identifiers shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// An observed or predicted physical column. The discriminant is the
/// canonical column order used by files and scale tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    #[serde(rename = "ux")]
    Ux,
    #[serde(rename = "uy")]
    Uy,
    #[serde(rename = "sxx")]
    Sxx,
    #[serde(rename = "syy")]
    Syy,
    #[serde(rename = "sxy")]
    Sxy,
    #[serde(rename = "szz")]
    Szz,
    #[serde(rename = "fx")]
    Fx,
    #[serde(rename = "fy")]
    Fy,
}

impl Field {
    pub const COUNT: usize = 8;
    pub const ALL: [Field; Field::COUNT] = [
        Field::Ux,
        Field::Uy,
        Field::Sxx,
        Field::Syy,
        Field::Sxy,
        Field::Szz,
        Field::Fx,
        Field::Fy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Ux => "ux",
            Field::Uy => "uy",
            Field::Sxx => "sxx",
            Field::Syy => "syy",
            Field::Sxy => "sxy",
            Field::Szz => "szz",
            Field::Fx => "fx",
            Field::Fy => "fy",
        }
    }

    pub fn is_displacement(self) -> bool {
        matches!(self, Field::Ux | Field::Uy)
    }

    pub fn is_stress(self) -> bool {
        matches!(self, Field::Sxx | Field::Syy | Field::Sxy | Field::Szz)
    }

    pub fn is_force(self) -> bool {
        matches!(self, Field::Fx | Field::Fy)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown field `{s}`"))
    }
}

/// Which governing equations the data and loss describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Elastic,
    Plastic,
}

impl Problem {
    /// Fields approximated by networks, in model order.
    pub fn network_fields(self) -> &'static [Field] {
        match self {
            Problem::Elastic => &[Field::Ux, Field::Uy, Field::Sxx, Field::Syy, Field::Sxy],
            Problem::Plastic => &[
                Field::Ux,
                Field::Uy,
                Field::Sxx,
                Field::Syy,
                Field::Szz,
                Field::Sxy,
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Problem::Elastic => "elastic",
            Problem::Plastic => "plastic",
        }
    }
}

impl FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "elastic" => Ok(Problem::Elastic),
            "plastic" => Ok(Problem::Plastic),
            _ => Err(format!("unknown problem `{s}` (expected elastic|plastic)")),
        }
    }
}

/// Fixed-size table indexed by [`Field`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldTable<T>(pub [T; Field::COUNT]);

impl<T: Copy> FieldTable<T> {
    pub fn splat(v: T) -> Self {
        Self([v; Field::COUNT])
    }
}

impl<T> std::ops::Index<Field> for FieldTable<T> {
    type Output = T;
    fn index(&self, f: Field) -> &T {
        &self.0[f.index()]
    }
}

impl<T> std::ops::IndexMut<Field> for FieldTable<T> {
    fn index_mut(&mut self, f: Field) -> &mut T {
        &mut self.0[f.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for f in Field::ALL {
            assert_eq!(f.name().parse::<Field>().unwrap(), f);
        }
        assert!("tau".parse::<Field>().is_err());
    }

    #[test]
    fn plastic_adds_out_of_plane_stress() {
        assert_eq!(Problem::Elastic.network_fields().len(), 5);
        assert!(Problem::Plastic.network_fields().contains(&Field::Szz));
    }
}
