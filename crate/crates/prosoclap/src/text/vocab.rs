//! Symbol/id vocabulary with reserved PAD and UNK entries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_SYMBOL: &str = "<pad>";
pub const UNK_SYMBOL: &str = "<unk>";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    id_to_symbol: Vec<String>,
    #[serde(skip)]
    symbol_to_id: HashMap<String, u32>,
}

impl Vocab {
    /// Build from non-reserved symbols; duplicates collapse, order of ids is
    /// the sorted symbol order (deterministic regardless of input order).
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut uniq: Vec<String> = symbols
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| s != PAD_SYMBOL && s != UNK_SYMBOL)
            .collect();
        uniq.sort();
        uniq.dedup();
        let mut id_to_symbol = vec![PAD_SYMBOL.to_string(), UNK_SYMBOL.to_string()];
        id_to_symbol.extend(uniq);
        let mut v = Vocab { id_to_symbol, symbol_to_id: HashMap::new() };
        v.rebuild_index();
        v
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.symbol_to_id = self
            .id_to_symbol
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
    }

    pub fn id(&self, symbol: &str) -> u32 {
        self.symbol_to_id.get(symbol).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.symbol_to_id.contains_key(symbol)
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.id_to_symbol[id as usize]
    }

    pub fn len(&self) -> usize {
        self.id_to_symbol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_symbol.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.id_to_symbol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_bijection() {
        let v = Vocab::from_symbols(["B", "A", "B"]);
        assert_eq!(v.id(PAD_SYMBOL), PAD_ID);
        assert_eq!(v.id(UNK_SYMBOL), UNK_ID);
        assert_eq!(v.len(), 4);
        // bijective on non-reserved entries
        for id in 2..v.len() as u32 {
            assert_eq!(v.id(v.symbol(id)), id);
        }
        assert_eq!(v.id("missing"), UNK_ID);
    }

    #[test]
    fn order_independent() {
        let a = Vocab::from_symbols(["x", "y", "z"]);
        let b = Vocab::from_symbols(["z", "x", "y"]);
        assert_eq!(a.symbols(), b.symbols());
    }
}
