use serde::Serialize;

/// Where one species' initial amount has gone, in mol.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub species: String,
    pub initial: f64,
    /// Dissolved and linearly sorbed amount.
    pub mobile: f64,
    /// Mineral-bound amount.
    pub immobile: f64,
    /// Still inside waste packages.
    pub package: f64,
    /// Net decay loss to date.
    pub decayed: f64,
    /// Net outflow through the domain boundary to date.
    pub outflow: f64,
}

impl LedgerEntry {
    pub fn accounted(&self) -> f64 {
        self.mobile + self.immobile + self.package + self.decayed + self.outflow
    }

    /// `|accounted − initial|` over the largest term involved.
    pub fn relative_imbalance(&self) -> f64 {
        let scale = [self.initial, self.mobile, self.immobile, self.package, self.decayed, self.outflow]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        (self.accounted() - self.initial).abs() / scale
    }
}

/// Global per-species mass ledger.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MassLedger {
    pub entries: Vec<LedgerEntry>,
}

impl MassLedger {
    pub fn max_relative_imbalance(&self) -> f64 {
        self.entries.iter().map(LedgerEntry::relative_imbalance).fold(0.0, f64::max)
    }

    pub fn entry(&self, species: &str) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.species == species)
    }
}
