use std::f64::consts::LN_10;

use nalgebra::DMatrix;

use super::ChemistryError;
use crate::numerics::newton_solve;

/// Residual tolerance on the scaled mass and mass-action rows.
pub const NEWTON_TOL: f64 = 1e-12;
/// log10 saturation index above which an absent mineral precipitates.
pub const SATURATION_TOL: f64 = 1e-8;
/// Floor on ln c reported in [`ChemState`] and used for starting guesses.
pub const LN_FLOOR: f64 = -80.0;
/// Exponent cap keeping concentrations finite during line search.
const LN_CAP: f64 = 700.0;
const NEWTON_MAX_ITER: usize = 200;
/// Starting-guess offsets from ln T tried after the caller's guess fails.
const GUESS_SHIFTS: [f64; 4] = [0.0, -2.0, -6.0, 2.0];

#[derive(Clone, Debug, PartialEq)]
pub struct Complex {
    pub name: String,
    /// Stoichiometric coefficient per primary.
    pub stoich: Vec<f64>,
    pub log_k: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mineral {
    pub name: String,
    pub stoich: Vec<f64>,
    pub log_ksp: f64,
    /// m³/mol
    pub molar_volume: f64,
}

/// Primaries, aqueous complexes and minerals with ideal activities.
///
/// `ln c_j = ln10·logK_j + Σ_i S_ji ln c_i` for complexes; a present
/// mineral satisfies `Σ_i M_ki ln c_i = ln10·logKsp_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChemicalSystem {
    pub primaries: Vec<String>,
    pub complexes: Vec<Complex>,
    pub minerals: Vec<Mineral>,
}

/// Chemical state of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ChemState {
    /// ln of free primary concentrations (mol/m³ water), floored at [`LN_FLOOR`].
    pub ln_c: Vec<f64>,
    /// mol/m³ bulk
    pub mineral_moles: Vec<f64>,
    pub porosity: f64,
}

impl ChemState {
    /// Starting state with `c = T` and no minerals.
    pub fn from_totals(totals: &[f64], n_minerals: usize, porosity: f64) -> Self {
        ChemState {
            ln_c: totals.iter().map(|t| t.ln().max(LN_FLOOR)).collect(),
            mineral_moles: vec![0.0; n_minerals],
            porosity,
        }
    }
}

/// Aqueous speciation of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Speciation {
    /// Free primary concentrations, mol/m³ water.
    pub primaries: Vec<f64>,
    pub complexes: Vec<f64>,
    pub iterations: usize,
}

/// Result of equilibrating one cell with its minerals.
#[derive(Clone, Debug, PartialEq)]
pub struct CellEquilibrium {
    pub speciation: Speciation,
    /// Dissolved totals, mol/m³ water.
    pub totals: Vec<f64>,
    /// mol/m³ bulk
    pub minerals: Vec<f64>,
    /// log10 saturation index per mineral at the solution.
    pub saturation: Vec<f64>,
}

/// Newton problem for a fixed set of active primaries and present minerals.
/// Unknowns are ln c of the active primaries followed by `m_k/φ` of the
/// present minerals.
struct Problem<'a> {
    system: &'a ChemicalSystem,
    t_all: Vec<f64>,
    active: Vec<usize>,
    present: Vec<usize>,
    /// ln c of primaries that are not unknowns.
    fixed_ln: Vec<f64>,
}

impl Problem<'_> {
    fn n_unknowns(&self) -> usize {
        self.active.len() + self.present.len()
    }

    fn ln_c(&self, x: &[f64]) -> Vec<f64> {
        let mut l = self.fixed_ln.clone();
        for (a, i) in self.active.iter().enumerate() {
            l[*i] = x[a];
        }
        l
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let sys = self.system;
        let na = self.active.len();
        let l = self.ln_c(x);
        let c: Vec<f64> = l.iter().map(|v| v.min(LN_CAP).exp()).collect();
        let t = sys.totals_from_species(&c, &sys.complex_conc(&l));
        let mut r = Vec::with_capacity(self.n_unknowns());
        for i in &self.active {
            let bound: f64 = self.present.iter().zip(&x[na..]).map(|(k, nk)| sys.minerals[*k].stoich[*i] * nk).sum();
            r.push((t[*i] + bound) / self.t_all[*i] - 1.0);
        }
        for k in &self.present {
            r.push(sys.ln_iap(&sys.minerals[*k].stoich, &l) - LN_10 * sys.minerals[*k].log_ksp);
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let sys = self.system;
        let na = self.active.len();
        let l = self.ln_c(x);
        let cx = sys.complex_conc(&l);
        let mut jac = DMatrix::zeros(self.n_unknowns(), self.n_unknowns());
        for (a, i) in self.active.iter().enumerate() {
            for (b, q) in self.active.iter().enumerate() {
                let mut v = if a == b { l[*i].min(LN_CAP).exp() } else { 0.0 };
                for (cj, cplx) in cx.iter().zip(&sys.complexes) {
                    v += cplx.stoich[*i] * cplx.stoich[*q] * cj;
                }
                jac[(a, b)] = v / self.t_all[*i];
            }
            for (p, k) in self.present.iter().enumerate() {
                jac[(a, na + p)] = sys.minerals[*k].stoich[*i] / self.t_all[*i];
            }
        }
        for (p, k) in self.present.iter().enumerate() {
            for (b, q) in self.active.iter().enumerate() {
                jac[(na + p, b)] = sys.minerals[*k].stoich[*q];
            }
        }
        jac
    }
}

impl ChemicalSystem {
    pub fn n_primaries(&self) -> usize {
        self.primaries.len()
    }

    pub fn validate(&self) -> Result<(), ChemistryError> {
        let bad = |m: String| Err(ChemistryError::InvalidSystem(m));
        let n = self.primaries.len();
        if n == 0 {
            return bad("no primary species".into());
        }
        let mut names: Vec<&str> = self.primaries.iter().map(String::as_str).collect();
        names.extend(self.complexes.iter().map(|c| c.name.as_str()));
        names.extend(self.minerals.iter().map(|m| m.name.as_str()));
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate species name {}", w[0]));
        }
        for c in &self.complexes {
            if c.stoich.len() != n || c.stoich.iter().any(|s| !(*s >= 0.0)) || c.stoich.iter().all(|s| *s == 0.0) {
                return bad(format!("complex {}: need non-negative stoichiometry over the primaries", c.name));
            }
            if !c.log_k.is_finite() {
                return bad(format!("complex {}: logK is not finite", c.name));
            }
        }
        for m in &self.minerals {
            if m.stoich.len() != n || m.stoich.iter().any(|s| !(*s >= 0.0)) || m.stoich.iter().all(|s| *s == 0.0) {
                return bad(format!("mineral {}: need non-negative stoichiometry over the primaries", m.name));
            }
            if !m.log_ksp.is_finite() {
                return bad(format!("mineral {}: logKsp is not finite", m.name));
            }
            if !(m.molar_volume > 0.0) || !m.molar_volume.is_finite() {
                return bad(format!("mineral {}: molar volume must be positive", m.name));
            }
        }
        Ok(())
    }

    /// Primaries that take part in no complex and no mineral.
    pub fn inert(&self) -> Vec<bool> {
        (0..self.primaries.len())
            .map(|i| self.complexes.iter().all(|c| c.stoich[i] == 0.0) && self.minerals.iter().all(|m| m.stoich[i] == 0.0))
            .collect()
    }

    /// `Σ_i s_i ln c_i`, skipping zero coefficients so absent primaries do
    /// not poison unrelated terms.
    fn ln_iap(&self, stoich: &[f64], ln_c: &[f64]) -> f64 {
        stoich.iter().zip(ln_c).filter(|(s, _)| **s != 0.0).map(|(s, x)| s * x).sum()
    }

    /// Complex concentrations for given ln c of the primaries.
    pub fn complex_conc(&self, ln_c: &[f64]) -> Vec<f64> {
        self.complexes
            .iter()
            .map(|c| (LN_10 * c.log_k + self.ln_iap(&c.stoich, ln_c)).min(LN_CAP).exp())
            .collect()
    }

    /// log10 saturation index per mineral for given ln c of the primaries.
    pub fn saturation_indices(&self, ln_c: &[f64]) -> Vec<f64> {
        self.minerals
            .iter()
            .map(|m| self.ln_iap(&m.stoich, ln_c) / LN_10 - m.log_ksp)
            .collect()
    }

    /// Dissolved totals `c_i + Σ_j S_ji c_j`.
    pub fn totals_from_species(&self, primaries: &[f64], complexes: &[f64]) -> Vec<f64> {
        let mut t = primaries.to_vec();
        for (c, cj) in self.complexes.iter().zip(complexes) {
            for (ti, s) in t.iter_mut().zip(&c.stoich) {
                *ti += s * cj;
            }
        }
        t
    }

    /// Scaled mass-balance residual of the dissolved-only problem,
    /// `(c_i + Σ_j S_ji c_j)/T_i − 1`, in ln c.
    pub fn speciation_residual(&self, totals: &[f64], ln_c: &[f64]) -> Vec<f64> {
        self.dissolved_problem(totals).residual(ln_c)
    }

    /// Analytic Jacobian of [`Self::speciation_residual`] with respect to ln c.
    pub fn speciation_jacobian(&self, totals: &[f64], ln_c: &[f64]) -> DMatrix<f64> {
        self.dissolved_problem(totals).jacobian(ln_c)
    }

    fn dissolved_problem(&self, totals: &[f64]) -> Problem<'_> {
        Problem {
            system: self,
            t_all: totals.to_vec(),
            active: (0..self.primaries.len()).collect(),
            present: Vec::new(),
            fixed_ln: vec![0.0; self.primaries.len()],
        }
    }

    /// Speciates dissolved totals (mol/m³ water) without minerals.
    pub fn speciate(&self, totals: &[f64]) -> Result<Speciation, ChemistryError> {
        Ok(self.solve(totals, &[], None, &[], NEWTON_TOL)?.speciation)
    }

    /// Equilibrates dissolved totals (mol/m³ water) with mineral amounts
    /// (mol/m³ bulk) at porosity `phi`. The returned totals plus minerals
    /// reproduce the input amounts.
    pub fn equilibrate(&self, totals: &[f64], minerals: &[f64], phi: f64) -> Result<CellEquilibrium, ChemistryError> {
        if minerals.len() != self.minerals.len() {
            return Err(ChemistryError::InvalidInput(format!(
                "{} mineral amounts for {} minerals",
                minerals.len(),
                self.minerals.len()
            )));
        }
        if !(phi > 0.0) {
            return Err(ChemistryError::InvalidInput(format!("porosity {phi} must be positive")));
        }
        let mut t_all = totals.to_vec();
        for (m, amount) in self.minerals.iter().zip(minerals) {
            for (t, s) in t_all.iter_mut().zip(&m.stoich) {
                *t += s * amount / phi;
            }
        }
        self.equilibrate_total(&t_all, phi, None, NEWTON_TOL)
    }

    /// Active-set equilibration of total amounts per m³ water.
    ///
    /// Starts fully dissolved. An absent mineral enters when its saturation
    /// index exceeds [`SATURATION_TOL`]; a present mineral leaves when its
    /// amount turns negative. Capped at `2·N_m + 2` passes.
    pub fn equilibrate_total(
        &self,
        t_all: &[f64],
        phi: f64,
        guess: Option<&[f64]>,
        tol: f64,
    ) -> Result<CellEquilibrium, ChemistryError> {
        let mut present: Vec<usize> = Vec::new();
        let mut guess = guess.map(<[f64]>::to_vec);
        let max_passes = 2 * self.minerals.len() + 2;
        for _ in 0..max_passes {
            let n_guess: Vec<f64> = vec![0.0; present.len()];
            let mut eq = self.solve(t_all, &present, guess.as_deref(), &n_guess, tol)?;
            let negative = present
                .iter()
                .copied()
                .filter(|k| eq.minerals[*k] < 0.0)
                .min_by(|a, b| eq.minerals[*a].total_cmp(&eq.minerals[*b]));
            if let Some(k) = negative {
                present.retain(|p| *p != k);
                continue;
            }
            let supersaturated = (0..self.minerals.len())
                .filter(|k| !present.contains(k) && eq.saturation[*k] > SATURATION_TOL)
                .max_by(|a, b| eq.saturation[*a].total_cmp(&eq.saturation[*b]));
            if let Some(k) = supersaturated {
                present.push(k);
                present.sort_unstable();
                guess = Some(eq.speciation.primaries.iter().map(|c| c.ln().max(LN_FLOOR)).collect());
                continue;
            }
            // solve() returns amounts per water volume
            for m in eq.minerals.iter_mut() {
                *m *= phi;
            }
            let mut dissolved = t_all.to_vec();
            for (m, amount) in self.minerals.iter().zip(&eq.minerals) {
                for (t, s) in dissolved.iter_mut().zip(&m.stoich) {
                    *t -= s * amount / phi;
                }
            }
            eq.totals = dissolved;
            return Ok(eq);
        }
        Err(ChemistryError::NoConvergence(format!("mineral active set did not settle in {max_passes} passes")))
    }

    /// Solves with the minerals in `present` held at saturation. Mineral
    /// amounts in the result are per m³ water; `totals` is left as computed
    /// from the species.
    fn solve(
        &self,
        t_all: &[f64],
        present: &[usize],
        guess: Option<&[f64]>,
        n_guess: &[f64],
        tol: f64,
    ) -> Result<CellEquilibrium, ChemistryError> {
        let n = self.primaries.len();
        if t_all.len() != n {
            return Err(ChemistryError::InvalidInput(format!("{} totals for {n} primaries", t_all.len())));
        }
        if !(tol > 0.0) {
            return Err(ChemistryError::InvalidInput(format!("tolerance {tol} must be positive")));
        }
        if let Some(i) = (0..n).find(|i| !t_all[*i].is_finite() || t_all[*i] < 0.0) {
            return Err(ChemistryError::InvalidInput(format!(
                "total amount {:e} of {} must be finite and non-negative",
                t_all[i], self.primaries[i]
            )));
        }
        let inert = self.inert();
        // reactive primaries with material present are unknowns
        let active: Vec<usize> = (0..n).filter(|i| !inert[*i] && t_all[*i] > 0.0).collect();
        let present: Vec<usize> = present
            .iter()
            .copied()
            .filter(|k| self.minerals[*k].stoich.iter().enumerate().all(|(i, s)| *s == 0.0 || t_all[i] > 0.0))
            .collect();
        let fixed_ln: Vec<f64> = (0..n).map(|i| if inert[i] { t_all[i].ln() } else { f64::NEG_INFINITY }).collect();
        let problem = Problem { system: self, t_all: t_all.to_vec(), active, present, fixed_ln };
        let na = problem.active.len();

        let mut x = vec![0.0; problem.n_unknowns()];
        let mut iterations = 0;
        if problem.n_unknowns() > 0 {
            let base: Vec<f64> = problem.active.iter().map(|i| t_all[*i].ln()).collect();
            let mut starts: Vec<Vec<f64>> = Vec::new();
            if let Some(g) = guess {
                starts.push(problem.active.iter().map(|i| g[*i].max(LN_FLOOR)).collect());
            }
            starts.extend(GUESS_SHIFTS.iter().map(|s| base.iter().map(|b| (b + s).max(LN_FLOOR)).collect()));
            let mut last_err = None;
            let mut solved = None;
            for mut x0 in starts {
                x0.extend(problem.present.iter().enumerate().map(|(p, _)| n_guess.get(p).copied().unwrap_or(0.0)));
                match newton_solve(|x: &[f64]| problem.residual(x), |x: &[f64]| problem.jacobian(x), &x0, tol, NEWTON_MAX_ITER) {
                    Ok((sol, report)) => {
                        solved = Some((sol, report.iterations));
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            let Some((sol, it)) = solved else {
                let reason = last_err.map(|e| e.to_string()).unwrap_or_default();
                return Err(ChemistryError::NoConvergence(reason));
            };
            x = sol;
            iterations = it;
        }

        let l = problem.ln_c(&x);
        let primaries: Vec<f64> = (0..n).map(|i| if inert[i] { t_all[i] } else { l[i].exp() }).collect();
        let complexes = self.complex_conc(&l);
        let mut minerals = vec![0.0; self.minerals.len()];
        for (p, k) in problem.present.iter().enumerate() {
            minerals[*k] = x[na + p];
        }
        Ok(CellEquilibrium {
            totals: self.totals_from_species(&primaries, &complexes),
            saturation: self.saturation_indices(&l),
            speciation: Speciation { primaries, complexes, iterations },
            minerals,
        })
    }
}

/// Dissolved-only speciation starting from `guess`.
pub fn speciate(system: &ChemicalSystem, totals: &[f64], guess: &ChemState, tol: f64) -> Result<ChemState, ChemistryError> {
    let eq = system.solve(totals, &[], Some(&guess.ln_c), &[], tol)?;
    Ok(ChemState {
        ln_c: eq.speciation.primaries.iter().map(|c| c.ln().max(LN_FLOOR)).collect(),
        mineral_moles: guess.mineral_moles.clone(),
        porosity: guess.porosity,
    })
}

/// Equilibrates total amounts (dissolved plus mineral-bound, per m³ water at
/// `state.porosity`). Returns the new state and the dissolved totals.
pub fn equilibrate_cell(
    system: &ChemicalSystem,
    totals: &[f64],
    state: &ChemState,
    tol: f64,
) -> Result<(ChemState, Vec<f64>), ChemistryError> {
    let eq = system.equilibrate_total(totals, state.porosity, Some(&state.ln_c), tol)?;
    let next = ChemState {
        ln_c: eq.speciation.primaries.iter().map(|c| c.ln().max(LN_FLOOR)).collect(),
        mineral_moles: eq.minerals,
        porosity: state.porosity,
    };
    Ok((next, eq.totals))
}

/// Dissolved totals evaluated from a state; no solve.
pub fn totals_from_state(system: &ChemicalSystem, state: &ChemState) -> Vec<f64> {
    let primaries: Vec<f64> = state.ln_c.iter().map(|l| l.exp()).collect();
    system.totals_from_species(&primaries, &system.complex_conc(&state.ln_c))
}

/// `φ0 − Σ_k V_k (m_k − m0_k)`, clamped to `[1e-4, 1]`. The flag reports
/// whether clamping was needed.
pub fn update_porosity(phi0: f64, minerals0: &[f64], minerals: &[f64], molar_volumes: &[f64]) -> (f64, bool) {
    let change: f64 = minerals
        .iter()
        .zip(minerals0)
        .zip(molar_volumes)
        .map(|((m, m0), v)| v * (m - m0))
        .sum();
    let phi = phi0 - change;
    let clamped = phi.clamp(1e-4, 1.0);
    (clamped, clamped != phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dimer(log_k: f64) -> ChemicalSystem {
        ChemicalSystem {
            primaries: vec!["A".into(), "B".into()],
            complexes: vec![Complex { name: "AB".into(), stoich: vec![1.0, 1.0], log_k }],
            minerals: vec![],
        }
    }

    fn salt(log_ksp: f64) -> ChemicalSystem {
        ChemicalSystem {
            primaries: vec!["A".into(), "B".into()],
            complexes: vec![],
            minerals: vec![Mineral { name: "AB(s)".into(), stoich: vec![1.0, 1.0], log_ksp, molar_volume: 1e-5 }],
        }
    }

    #[test]
    fn dimer_matches_quadratic() {
        let s = dimer(2.0);
        let sp = s.speciate(&[1.0, 2.0]).unwrap();
        let x = (301.0 - (301.0f64 * 301.0 - 80000.0).sqrt()) / 200.0;
        assert!((sp.complexes[0] - x).abs() < 1e-10 * x);
        assert!((sp.primaries[0] - (1.0 - x)).abs() < 1e-10);
        assert!((sp.primaries[1] - (2.0 - x)).abs() < 1e-10);
    }

    #[test]
    fn strong_complex_converges() {
        let s = dimer(12.0);
        let sp = s.speciate(&[1e-3, 1e-3]).unwrap();
        let t = s.totals_from_species(&sp.primaries, &sp.complexes);
        assert!((t[0] - 1e-3).abs() < 1e-14);
        // K a² = 1e-3 - a with a tiny
        let a = sp.primaries[0];
        assert!((1e12 * a * a - (1e-3 - a)).abs() < 1e-12);
    }

    #[test]
    fn inert_primary_bypasses_newton() {
        let mut s = dimer(1.0);
        s.primaries.push("Tracer".into());
        s.complexes[0].stoich.push(0.0);
        let sp = s.speciate(&[0.5, 0.5, 0.0]).unwrap();
        assert_eq!(sp.primaries[2], 0.0);
        let sp = s.speciate(&[0.5, 0.5, 3.0]).unwrap();
        assert_eq!(sp.primaries[2], 3.0);
    }

    #[test]
    fn solubility_with_excess_solid() {
        let s = salt(-4.0);
        let eq = s.equilibrate(&[0.0, 0.0], &[10.0], 0.5).unwrap();
        assert!((eq.speciation.primaries[0] - 1e-2).abs() < 1e-10 * 1e-2);
        assert!((eq.minerals[0] - (10.0 - 0.5 * 1e-2)).abs() < 1e-12);
        assert!(eq.saturation[0].abs() < 1e-10);
    }

    #[test]
    fn undersaturated_solid_dissolves_completely() {
        let s = salt(-4.0);
        let eq = s.equilibrate(&[0.0, 0.0], &[1e-3], 0.5).unwrap();
        assert_eq!(eq.minerals[0], 0.0);
        assert!((eq.totals[0] - 2e-3).abs() < 1e-15);
        assert!(eq.saturation[0] < 0.0);
    }

    #[test]
    fn supersaturated_solution_precipitates() {
        let s = salt(-4.0);
        let eq = s.equilibrate(&[0.1, 0.1], &[0.0], 0.5).unwrap();
        assert!((eq.totals[0] - 1e-2).abs() < 1e-12);
        assert!((eq.minerals[0] - 0.09 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn porosity_update_and_clamp() {
        let (phi, hit) = update_porosity(0.3, &[1.0], &[2.0], &[0.1]);
        assert!((phi - 0.2).abs() < 1e-15 && !hit);
        let (phi, hit) = update_porosity(0.3, &[1.0], &[10.0], &[0.1]);
        assert_eq!(phi, 1e-4);
        assert!(hit);
    }

    #[test]
    fn rejects_bad_systems() {
        let mut s = dimer(1.0);
        s.complexes[0].name = "A".into();
        assert!(s.validate().is_err());
        let mut s = salt(1.0);
        s.minerals[0].stoich = vec![0.0, 0.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn identity_speciation_without_complexes() {
        let s = ChemicalSystem { primaries: vec!["A".into(), "B".into()], complexes: vec![], minerals: vec![] };
        let sp = s.speciate(&[0.3, 7.0]).unwrap();
        assert_eq!(sp.primaries, vec![0.3, 7.0]);
    }

    #[test]
    fn self_dimer_oracle() {
        let s = ChemicalSystem {
            primaries: vec!["A".into()],
            complexes: vec![Complex { name: "A2".into(), stoich: vec![2.0], log_k: 2.0 }],
            minerals: vec![],
        };
        let state = speciate(&s, &[0.01], &ChemState::from_totals(&[0.01], 0, 1.0), NEWTON_TOL).unwrap();
        let c = state.ln_c[0].exp();
        let c2 = s.complex_conc(&state.ln_c)[0];
        assert!((c - 5.0e-3).abs() < 1e-10);
        assert!((c2 - 2.5e-3).abs() < 1e-10);
        assert!((totals_from_state(&s, &state)[0] - 0.01).abs() < 1e-14);
    }

    #[test]
    fn independent_primaries_decouple() {
        let joint = ChemicalSystem {
            primaries: vec!["A".into(), "B".into()],
            complexes: vec![
                Complex { name: "A2".into(), stoich: vec![2.0, 0.0], log_k: 1.5 },
                Complex { name: "B3".into(), stoich: vec![0.0, 3.0], log_k: 3.0 },
            ],
            minerals: vec![],
        };
        let only = |i: usize| ChemicalSystem {
            primaries: vec![joint.primaries[i].clone()],
            complexes: vec![Complex { name: joint.complexes[i].name.clone(), stoich: vec![joint.complexes[i].stoich[i]], log_k: joint.complexes[i].log_k }],
            minerals: vec![],
        };
        let sp = joint.speciate(&[0.2, 0.05]).unwrap();
        let a = only(0).speciate(&[0.2]).unwrap();
        let b = only(1).speciate(&[0.05]).unwrap();
        assert!((sp.primaries[0] - a.primaries[0]).abs() < 1e-14);
        assert!((sp.primaries[1] - b.primaries[0]).abs() < 1e-14);
    }

    #[test]
    fn solubility_cap_oracle() {
        let s = ChemicalSystem {
            primaries: vec!["A".into()],
            complexes: vec![],
            minerals: vec![Mineral { name: "A(s)".into(), stoich: vec![1.0], log_ksp: -4.0, molar_volume: 1e-5 }],
        };
        let start = ChemState::from_totals(&[1e-3], 1, 1.0);
        let (state, dissolved) = equilibrate_cell(&s, &[1e-3], &start, NEWTON_TOL).unwrap();
        assert!((dissolved[0] - 1e-4).abs() < 1e-10);
        assert!((state.mineral_moles[0] - 9e-4).abs() < 1e-10);
        let (state, dissolved) = equilibrate_cell(&s, &[5e-5], &start, NEWTON_TOL).unwrap();
        assert_eq!(state.mineral_moles[0], 0.0);
        assert!((dissolved[0] - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn floor_limit_of_totals() {
        let s = dimer(1.0);
        let state = ChemState { ln_c: vec![LN_FLOOR, LN_FLOOR], mineral_moles: vec![], porosity: 1.0 };
        let t = totals_from_state(&s, &state);
        assert!(t[0] > 0.0 && t[0] < 1e-30);
    }

    #[test]
    fn porosity_update_example() {
        let (phi, hit) = update_porosity(0.3, &[0.0], &[10.0], &[1e-5]);
        assert!((phi - 0.2999).abs() < 1e-15 && !hit);
        assert_eq!(update_porosity(0.3, &[1.0], &[1.0], &[1e-5]), (0.3, false));
        assert_eq!(update_porosity(0.9, &[1e4], &[0.0], &[1e-4]), (1.0, true));
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            ta in 1e-3f64..1.0,
            tb in 1e-3f64..1.0,
            k1 in -1.0f64..3.0,
            k2 in -1.0f64..3.0,
            la in -6.0f64..0.0,
            lb in -6.0f64..0.0,
        ) {
            let s = ChemicalSystem {
                primaries: vec!["A".into(), "B".into()],
                complexes: vec![
                    Complex { name: "AB".into(), stoich: vec![1.0, 1.0], log_k: k1 },
                    Complex { name: "A2B".into(), stoich: vec![2.0, 1.0], log_k: k2 },
                ],
                minerals: vec![],
            };
            let t = [ta, tb];
            let x = [la, lb];
            let analytic = s.speciation_jacobian(&t, &x);
            let fd = crate::numerics::finite_difference_jacobian(|v| s.speciation_residual(&t, v), &x, 1e-6);
            for (a, f) in analytic.iter().zip(fd.iter()) {
                prop_assert!((a - f).abs() <= 1e-6 * a.abs().max(1e-8), "{a} vs {f}");
            }
        }

        #[test]
        fn speciation_independent_of_guess(
            ta in 1e-3f64..1.0,
            tb in 1e-3f64..1.0,
            da in -5.0f64..5.0,
            db in -5.0f64..5.0,
        ) {
            let s = dimer(3.0);
            let reference = speciate(&s, &[ta, tb], &ChemState::from_totals(&[ta, tb], 0, 1.0), NEWTON_TOL).unwrap();
            let guess = ChemState { ln_c: vec![reference.ln_c[0] + da, reference.ln_c[1] + db], mineral_moles: vec![], porosity: 1.0 };
            let other = speciate(&s, &[ta, tb], &guess, NEWTON_TOL).unwrap();
            for (a, b) in reference.ln_c.iter().zip(&other.ln_c) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn equilibration_conserves_mass(
            ta in 0.0f64..1.0,
            tb in 0.0f64..1.0,
            m in 0.0f64..0.1,
            phi in 0.05f64..1.0,
            log_ksp in -6.0f64..-1.0,
            log_k in -2.0f64..6.0,
        ) {
            let mut s = salt(log_ksp);
            s.complexes.push(Complex { name: "AB".into(), stoich: vec![1.0, 1.0], log_k });
            let eq = s.equilibrate(&[ta, tb], &[m], phi).unwrap();
            for (i, t) in [ta, tb].iter().enumerate() {
                let before = phi * t + m;
                let after = phi * eq.totals[i] + eq.minerals[0];
                prop_assert!((before - after).abs() <= 1e-12 * before.max(1e-300));
            }
            prop_assert!(eq.minerals[0] >= 0.0);
            prop_assert!(eq.saturation[0] <= SATURATION_TOL + 1e-9);
            if eq.minerals[0] > 0.0 {
                prop_assert!(eq.saturation[0].abs() < 1e-9);
            }
        }
    }
}
