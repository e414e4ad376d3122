use std::fmt;

/// Elements covered by the SMILES vocabulary this crate understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    Si,
    P,
    S,
    Cl,
    Br,
    Sn,
    I,
}

impl Element {
    pub const ALL: [Element; 13] = [
        Element::H,
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::Si,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::Sn,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::Si => "Si",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::Sn => "Sn",
            Element::I => "I",
        }
    }

    /// Case-insensitive on the first letter only, so `"c"` and `"C"` both map to carbon.
    pub fn from_symbol(symbol: &str) -> Option<Element> {
        let mut chars = symbol.chars();
        let first = chars.next()?.to_ascii_uppercase();
        let mut canonical = String::with_capacity(symbol.len());
        canonical.push(first);
        canonical.extend(chars);
        Element::ALL.into_iter().find(|e| e.symbol() == canonical)
    }

    /// Standard atomic mass in g/mol.
    pub fn mass(self) -> f64 {
        match self {
            Element::H => 1.008,
            Element::B => 10.81,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::F => 18.998,
            Element::Si => 28.085,
            Element::P => 30.974,
            Element::S => 32.06,
            Element::Cl => 35.45,
            Element::Br => 79.904,
            Element::Sn => 118.71,
            Element::I => 126.904,
        }
    }

    /// Allowed valences of the neutral atom, ascending.
    pub fn valences(self) -> &'static [u32] {
        match self {
            Element::H => &[1],
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::Si => &[4],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::Sn => &[2, 4],
        }
    }

    /// Allowed valences once a formal charge is applied. Electron-rich atoms
    /// (groups 15-17) gain one bond per positive charge and lose one per
    /// negative charge; the group 13/14 atoms lose one bond per unit of
    /// charge of either sign.
    pub fn charged_valences(self, charge: i32) -> Vec<u32> {
        if charge == 0 {
            return self.valences().to_vec();
        }
        let shift = |v: u32, d: i32| -> Option<u32> { u32::try_from(v as i32 + d).ok() };
        let adjusted: Vec<u32> = match self {
            Element::B | Element::C | Element::Si | Element::Sn | Element::H => self
                .valences()
                .iter()
                .filter_map(|&v| shift(v, -charge.abs()))
                .collect(),
            _ => self
                .valences()
                .iter()
                .filter_map(|&v| shift(v, charge))
                .collect(),
        };
        let mut adjusted = adjusted;
        adjusted.dedup();
        adjusted
    }

    /// Whether the element may appear as a lowercase aromatic atom.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
