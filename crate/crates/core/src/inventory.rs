use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

/// CTC blank symbol.
pub const BLANK: &str = "<blk>";
/// Attention start-of-sequence symbol.
pub const SOS: &str = "<sos>";
/// Attention end-of-sequence symbol.
pub const EOS: &str = "<eos>";
/// Suffix marking the anti-phone paired with a base phone.
pub const ANTI_SUFFIX: &str = "*";

const TABLE_48_39: &str = include_str!("../data/phones48.tsv");

/// The 48-unit training phone set, its paired anti-phones, the CTC/attention
/// special symbols, and the 48 -> 39 scoring collapse.
#[derive(Debug, Clone)]
pub struct PhoneInventory {
    base_phones: Vec<String>,
    anti_phones: Vec<String>,
    collapse: Vec<usize>,
    index: HashMap<String, usize>,
}

impl PhoneInventory {
    /// Parses a two-column phone table and validates the inventory invariants.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut base_phones = Vec::new();
        let mut collapsed_syms = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(phone), Some(target)) = (parts.next(), parts.next()) else {
                return Err(Error::Config(format!(
                    "phone table line {}: expected 'phone<TAB>collapsed'",
                    lineno + 1
                )));
            };
            base_phones.push(phone.to_string());
            collapsed_syms.push(target.to_string());
        }
        if base_phones.len() != 48 {
            return Err(Error::Config(format!(
                "phone table has {} phones, expected 48",
                base_phones.len()
            )));
        }
        let index: HashMap<String, usize> = base_phones
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        if index.len() != base_phones.len() {
            return Err(Error::Config("duplicate phone in table".into()));
        }
        let mut collapse = Vec::with_capacity(48);
        for (i, target) in collapsed_syms.iter().enumerate() {
            let &j = index.get(target).ok_or_else(|| {
                Error::Config(format!(
                    "collapse target '{}' of '{}' is not in the base set",
                    target, base_phones[i]
                ))
            })?;
            collapse.push(j);
        }
        let image: BTreeSet<usize> = collapse.iter().copied().collect();
        if image.len() != 39 {
            return Err(Error::Config(format!(
                "collapse image has {} symbols, expected 39",
                image.len()
            )));
        }
        for &j in &image {
            if collapse[j] != j {
                return Err(Error::Config(format!(
                    "collapse is not idempotent at '{}'",
                    base_phones[j]
                )));
            }
        }
        let anti_phones: Vec<String> = base_phones
            .iter()
            .map(|p| format!("{p}{ANTI_SUFFIX}"))
            .collect();
        Ok(PhoneInventory {
            base_phones,
            anti_phones,
            collapse,
            index,
        })
    }

    /// The fixed 48-phone inventory shipped with the crate.
    pub fn build() -> Result<Self> {
        Self::from_table(TABLE_48_39)
    }

    pub fn base_phones(&self) -> &[String] {
        &self.base_phones
    }

    pub fn anti_phones(&self) -> &[String] {
        &self.anti_phones
    }

    pub fn blank(&self) -> &'static str {
        BLANK
    }

    pub fn sos(&self) -> &'static str {
        SOS
    }

    pub fn eos(&self) -> &'static str {
        EOS
    }

    pub fn base_index(&self, phone: &str) -> Option<usize> {
        self.index.get(phone).copied()
    }

    pub fn is_base(&self, sym: &str) -> bool {
        self.index.contains_key(sym)
    }

    pub fn is_anti(&self, sym: &str) -> bool {
        sym.strip_suffix(ANTI_SUFFIX)
            .is_some_and(|b| self.index.contains_key(b))
    }

    pub fn anti_of(&self, base: &str) -> Result<String> {
        if !self.is_base(base) {
            return Err(Error::Schema(format!("unknown base phone '{base}'")));
        }
        Ok(format!("{base}{ANTI_SUFFIX}"))
    }

    /// Base phone underlying a symbol: identity for base phones, strip for
    /// anti-phones.
    pub fn base_of<'a>(&self, sym: &'a str) -> Result<&'a str> {
        if self.is_base(sym) {
            return Ok(sym);
        }
        if let Some(b) = sym.strip_suffix(ANTI_SUFFIX) {
            if self.index.contains_key(b) {
                return Ok(b);
            }
        }
        Err(Error::Schema(format!("unknown symbol '{sym}'")))
    }

    /// Collapses one symbol to the 39-phone scoring set; anti-phones collapse
    /// alongside their base.
    pub fn collapse_symbol(&self, sym: &str) -> Result<String> {
        let base = self.base_of(sym)?;
        let collapsed = &self.base_phones[self.collapse[self.index[base]]];
        if self.is_anti(sym) {
            Ok(format!("{collapsed}{ANTI_SUFFIX}"))
        } else {
            Ok(collapsed.clone())
        }
    }

    pub fn collapse_sequence(&self, seq: &[String]) -> Result<Vec<String>> {
        seq.iter().map(|s| self.collapse_symbol(s)).collect()
    }

    /// The 39 distinct collapsed base phones, in base-set order.
    pub fn collapsed_base_set(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &j in &self.collapse {
            if seen.insert(j) {
                out.push(self.base_phones[j].clone());
            }
        }
        out
    }
}

/// Symbol table of one model head: a fixed symbol order plus optional
/// special-symbol slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    blank: Option<usize>,
    sos: Option<usize>,
    eos: Option<usize>,
}

impl Vocab {
    fn build(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab {
            symbols,
            index,
            blank: None,
            sos: None,
            eos: None,
        }
    }

    /// CTC head vocabulary: 48 base + 48 anti + blank.
    pub fn ctc(inv: &PhoneInventory) -> Self {
        let mut symbols: Vec<String> = inv.base_phones().to_vec();
        symbols.extend(inv.anti_phones().iter().cloned());
        symbols.push(BLANK.to_string());
        let mut v = Self::build(symbols);
        v.blank = Some(v.symbols.len() - 1);
        v
    }

    /// Attention head vocabulary: 48 base + 48 anti + sos + eos. Phone indices
    /// agree with the CTC vocabulary.
    pub fn attention(inv: &PhoneInventory) -> Self {
        let mut symbols: Vec<String> = inv.base_phones().to_vec();
        symbols.extend(inv.anti_phones().iter().cloned());
        symbols.push(SOS.to_string());
        symbols.push(EOS.to_string());
        let mut v = Self::build(symbols);
        v.sos = Some(v.symbols.len() - 2);
        v.eos = Some(v.symbols.len() - 1);
        v
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn index_of(&self, sym: &str) -> Result<usize> {
        self.index
            .get(sym)
            .copied()
            .ok_or_else(|| Error::Schema(format!("symbol '{sym}' not in vocabulary")))
    }

    pub fn blank(&self) -> Option<usize> {
        self.blank
    }

    pub fn sos(&self) -> Option<usize> {
        self.sos
    }

    pub fn eos(&self) -> Option<usize> {
        self.eos
    }

    pub fn encode(&self, seq: &[String]) -> Result<Vec<usize>> {
        seq.iter().map(|s| self.index_of(s)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.symbols[i].clone()).collect()
    }
}
