//! Compact text form for cell arrays: one character per cell.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

use super::CellState;

pub fn serialize<S: Serializer>(cells: &[CellState], s: S) -> Result<S::Ok, S::Error> {
    let text: String = cells.iter().map(|c| c.symbol()).collect();
    s.serialize_str(&text)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CellState>, D::Error> {
    let text = String::deserialize(d)?;
    text.chars()
        .map(|c| CellState::from_symbol(c).ok_or_else(|| D::Error::custom(format!("bad cell symbol {c:?}"))))
        .collect()
}
