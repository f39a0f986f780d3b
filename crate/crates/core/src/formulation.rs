//! The unit-commitment linear model, shared by the MILP and the economic
//! dispatch.
//!
//! With [`Commitment::Free`] the commitment variables `u, v, w` are columns
//! and the result is the MILP (relaxed). With [`Commitment::Fixed`] they are
//! constants taken from a schedule, folded into row and column bounds, and
//! the result is the dispatch LP. Both modes go through the same row
//! builder so the two can never disagree about the physics.

use warmuc_lp::LpProblem;

use crate::instance::UcInstance;
use crate::schedule::Schedule;

const INF: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy)]
pub enum Commitment<'a> {
    Free,
    Fixed(&'a Schedule),
}

/// Column layout. Commitment blocks `u, v, w` (each `N*T`, generator-major)
/// exist only in the free model; then `p`, then per-hour charge,
/// discharge, state of charge and curtailment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_gen: usize,
    pub horizon: usize,
    pub commitment_cols: bool,
}

impl Layout {
    fn nt(&self) -> usize {
        self.n_gen * self.horizon
    }

    fn p_base(&self) -> usize {
        if self.commitment_cols {
            3 * self.nt()
        } else {
            0
        }
    }

    fn storage_base(&self) -> usize {
        self.p_base() + self.nt()
    }

    pub fn u(&self, i: usize, t: usize) -> usize {
        debug_assert!(self.commitment_cols);
        i * self.horizon + t
    }

    pub fn v(&self, i: usize, t: usize) -> usize {
        debug_assert!(self.commitment_cols);
        self.nt() + i * self.horizon + t
    }

    pub fn w(&self, i: usize, t: usize) -> usize {
        debug_assert!(self.commitment_cols);
        2 * self.nt() + i * self.horizon + t
    }

    pub fn p(&self, i: usize, t: usize) -> usize {
        self.p_base() + i * self.horizon + t
    }

    pub fn charge(&self, t: usize) -> usize {
        self.storage_base() + t
    }

    pub fn discharge(&self, t: usize) -> usize {
        self.storage_base() + self.horizon + t
    }

    pub fn soc(&self, t: usize) -> usize {
        self.storage_base() + 2 * self.horizon + t
    }

    pub fn curtail(&self, t: usize) -> usize {
        self.storage_base() + 3 * self.horizon + t
    }

    pub fn num_cols(&self) -> usize {
        self.storage_base() + 4 * self.horizon
    }

    /// Human-readable name of a column, e.g. `u[2,5]` or `soc[3]`.
    pub fn name(&self, col: usize) -> String {
        let nt = self.nt();
        let t = self.horizon;
        let mut c = col;
        if self.commitment_cols {
            for prefix in ["u", "v", "w"] {
                if c < nt {
                    return format!("{prefix}[{},{}]", c / t, c % t);
                }
                c -= nt;
            }
        }
        if c < nt {
            return format!("p[{},{}]", c / t, c % t);
        }
        c -= nt;
        let names = ["charge", "discharge", "soc", "curtail"];
        format!("{}[{}]", names[c / t], c % t)
    }

    /// Inverse of [`Layout::name`].
    pub fn column(&self, name: &str) -> Option<usize> {
        let (prefix, rest) = name.split_once('[')?;
        let inner = rest.strip_suffix(']')?;
        let idx: Vec<usize> = inner.split(',').map(|s| s.trim().parse().ok()).collect::<Option<_>>()?;
        let col = match (prefix, idx.as_slice()) {
            ("u" | "v" | "w", _) if !self.commitment_cols => return None,
            ("u", &[i, t]) if i < self.n_gen && t < self.horizon => self.u(i, t),
            ("v", &[i, t]) if i < self.n_gen && t < self.horizon => self.v(i, t),
            ("w", &[i, t]) if i < self.n_gen && t < self.horizon => self.w(i, t),
            ("p", &[i, t]) if i < self.n_gen && t < self.horizon => self.p(i, t),
            ("charge", &[t]) if t < self.horizon => self.charge(t),
            ("discharge", &[t]) if t < self.horizon => self.discharge(t),
            ("soc", &[t]) if t < self.horizon => self.soc(t),
            ("curtail", &[t]) if t < self.horizon => self.curtail(t),
            _ => return None,
        };
        Some(col)
    }
}

/// What kind of physical constraint a row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKind {
    Balance,
    OutputMin,
    OutputMax,
    RampUp,
    RampDown,
    Logic,
    MinUp,
    MinDown,
    Storage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowTag {
    pub kind: RowKind,
    pub generator: Option<usize>,
    pub hour: usize,
}

/// The built model: LP, its column layout, row tags, and the objective
/// constant contributed by fixed commitments.
#[derive(Debug, Clone)]
pub struct UcModel {
    pub lp: LpProblem,
    pub layout: Layout,
    pub tags: Vec<RowTag>,
    pub constant: f64,
}

#[derive(Clone, Copy)]
enum Term {
    Col(usize),
    Const(f64),
}

struct RowBuilder<'a> {
    lp: &'a mut LpProblem,
    tags: &'a mut Vec<RowTag>,
    coeffs: Vec<(usize, f64)>,
    offset: f64,
}

impl<'a> RowBuilder<'a> {
    fn add(&mut self, term: Term, a: f64) -> &mut Self {
        match term {
            Term::Col(j) => self.coeffs.push((j, a)),
            Term::Const(c) => self.offset += a * c,
        }
        self
    }

    /// Emits `lo <= row <= hi`, moving constants to the bounds. Rows that
    /// reduce to constants are dropped; those are checked structurally.
    fn finish(&mut self, lo: f64, hi: f64, tag: RowTag) {
        if self.coeffs.is_empty() {
            self.offset = 0.0;
            return;
        }
        let coeffs = std::mem::take(&mut self.coeffs);
        self.lp.add_row(coeffs, lo - self.offset, hi - self.offset);
        self.tags.push(tag);
        self.offset = 0.0;
    }
}

fn b(on: bool) -> f64 {
    if on {
        1.0
    } else {
        0.0
    }
}

pub fn build(instance: &UcInstance, commitment: Commitment<'_>) -> UcModel {
    let n_gen = instance.num_generators();
    let horizon = instance.horizon();
    let free = matches!(commitment, Commitment::Free);
    let layout = Layout {
        n_gen,
        horizon,
        commitment_cols: free,
    };
    let mut lp = LpProblem::new();
    let mut constant = 0.0;

    // Columns in layout order.
    if free {
        for g in &instance.generators {
            let hold = g.initial_hold().min(horizon);
            for t in 0..horizon {
                let (lo, hi) = if t < hold {
                    let v = b(g.init_on());
                    (v, v)
                } else {
                    (0.0, 1.0)
                };
                lp.add_col(g.c_noload, lo, hi);
            }
        }
        for g in &instance.generators {
            for _ in 0..horizon {
                lp.add_col(g.c_startup, 0.0, 1.0);
            }
        }
        for _ in 0..n_gen * horizon {
            lp.add_col(0.0, 0.0, 1.0);
        }
    }
    let fixed = match commitment {
        Commitment::Fixed(s) => Some(s),
        Commitment::Free => None,
    };
    for (i, g) in instance.generators.iter().enumerate() {
        for t in 0..horizon {
            match fixed {
                None => lp.add_col(g.c_var, 0.0, INF),
                Some(s) => {
                    let on = s.get(i, t);
                    if on {
                        constant += g.c_noload;
                        if s.starts_up(instance, i, t) {
                            constant += g.c_startup;
                        }
                    }
                    lp.add_col(g.c_var, b(on) * g.p_min, b(on) * g.p_max)
                }
            };
        }
    }
    let st = &instance.storage;
    for _ in 0..horizon {
        lp.add_col(0.0, 0.0, st.p_charge_max);
    }
    for _ in 0..horizon {
        lp.add_col(0.0, 0.0, st.p_discharge_max);
    }
    for t in 0..horizon {
        let lo = if t + 1 == horizon { st.soc_init } else { 0.0 };
        lp.add_col(0.0, lo, st.energy_cap);
    }
    for t in 0..horizon {
        lp.add_col(0.0, 0.0, instance.profiles.renewables(t));
    }
    debug_assert_eq!(lp.num_cols(), layout.num_cols());

    let u = |i: usize, t: isize| -> Term {
        if t < 0 {
            return Term::Const(b(instance.generators[i].init_on()));
        }
        let t = t as usize;
        match fixed {
            None => Term::Col(layout.u(i, t)),
            Some(s) => Term::Const(b(s.get(i, t))),
        }
    };
    let v = |i: usize, t: usize| -> Term {
        match fixed {
            None => Term::Col(layout.v(i, t)),
            Some(s) => Term::Const(b(s.starts_up(instance, i, t))),
        }
    };
    let w = |i: usize, t: usize| -> Term {
        match fixed {
            None => Term::Col(layout.w(i, t)),
            Some(s) => Term::Const(b(s.shuts_down(instance, i, t))),
        }
    };
    let p = |i: usize, t: isize| -> Term {
        if t < 0 {
            Term::Const(instance.generators[i].init_power)
        } else {
            Term::Col(layout.p(i, t as usize))
        }
    };

    let mut tags = Vec::new();
    let mut rb = RowBuilder {
        lp: &mut lp,
        tags: &mut tags,
        coeffs: Vec::new(),
        offset: 0.0,
    };
    let tag = |kind, generator, hour| RowTag { kind, generator, hour };

    for t in 0..horizon {
        for i in 0..n_gen {
            rb.add(Term::Col(layout.p(i, t)), 1.0);
        }
        rb.add(Term::Col(layout.discharge(t)), 1.0)
            .add(Term::Col(layout.charge(t)), -1.0)
            .add(Term::Col(layout.curtail(t)), -1.0);
        let l = instance.profiles.net_load(t);
        rb.finish(l, l, tag(RowKind::Balance, None, t));
    }

    for (i, g) in instance.generators.iter().enumerate() {
        let sr = g.startup_ramp();
        for t in 0..horizon {
            let ti = t as isize;
            if free {
                // Output band; with fixed commitments these are column bounds.
                rb.add(p(i, ti), 1.0).add(u(i, ti), -g.p_min);
                rb.finish(0.0, INF, tag(RowKind::OutputMin, Some(i), t));
                rb.add(p(i, ti), 1.0).add(u(i, ti), -g.p_max);
                rb.finish(-INF, 0.0, tag(RowKind::OutputMax, Some(i), t));
            }
            rb.add(p(i, ti), 1.0)
                .add(p(i, ti - 1), -1.0)
                .add(u(i, ti - 1), -g.ramp_up)
                .add(v(i, t), -sr);
            rb.finish(-INF, 0.0, tag(RowKind::RampUp, Some(i), t));
            rb.add(p(i, ti - 1), 1.0)
                .add(p(i, ti), -1.0)
                .add(u(i, ti), -g.ramp_down)
                .add(w(i, t), -sr);
            rb.finish(-INF, 0.0, tag(RowKind::RampDown, Some(i), t));
            if free {
                rb.add(u(i, ti), 1.0)
                    .add(u(i, ti - 1), -1.0)
                    .add(v(i, t), -1.0)
                    .add(w(i, t), 1.0);
                rb.finish(0.0, 0.0, tag(RowKind::Logic, Some(i), t));
                for tau in (t + 1).saturating_sub(g.min_up)..=t {
                    rb.add(v(i, tau), 1.0);
                }
                rb.add(u(i, ti), -1.0);
                rb.finish(-INF, 0.0, tag(RowKind::MinUp, Some(i), t));
                for tau in (t + 1).saturating_sub(g.min_down)..=t {
                    rb.add(w(i, tau), 1.0);
                }
                rb.add(u(i, ti), 1.0);
                rb.finish(-INF, 1.0, tag(RowKind::MinDown, Some(i), t));
            }
        }
    }

    for t in 0..horizon {
        let prev = if t == 0 {
            Term::Const(st.soc_init)
        } else {
            Term::Col(layout.soc(t - 1))
        };
        rb.add(Term::Col(layout.soc(t)), 1.0)
            .add(prev, -1.0)
            .add(Term::Col(layout.charge(t)), -st.eff_charge)
            .add(Term::Col(layout.discharge(t)), 1.0 / st.eff_discharge);
        rb.finish(0.0, 0.0, tag(RowKind::Storage, None, t));
    }

    UcModel {
        lp,
        layout,
        tags,
        constant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{single_gen, small_random};

    #[test]
    fn column_count_matches_closed_form() {
        let inst = small_random(3, 6, 1);
        let m = build(&inst, Commitment::Free);
        assert_eq!(m.lp.num_cols(), 3 * 6 * 4 + 3 * 6 + 6);
        assert_eq!(m.tags.len(), m.lp.num_rows());
        let s = Schedule::all_on(&inst);
        let d = build(&inst, Commitment::Fixed(&s));
        assert_eq!(d.lp.num_cols(), 3 * 6 + 4 * 6);
    }

    #[test]
    fn names_are_a_bijection() {
        let inst = small_random(2, 5, 3);
        for free in [true, false] {
            let layout = Layout {
                n_gen: 2,
                horizon: inst.horizon(),
                commitment_cols: free,
            };
            let mut seen = std::collections::HashSet::new();
            for c in 0..layout.num_cols() {
                let name = layout.name(c);
                assert!(seen.insert(name.clone()));
                assert_eq!(layout.column(&name), Some(c), "{name}");
            }
        }
    }

    #[test]
    fn fixed_commitment_constant_counts_startups() {
        let mut inst = single_gen(&[50.0, 50.0, 50.0]);
        let g = &mut inst.generators[0];
        g.c_noload = 5.0;
        g.c_startup = 100.0;
        let s = Schedule::from_rows(&[vec![true, true, false]]);
        let m = build(&inst, Commitment::Fixed(&s));
        assert_eq!(m.constant, 110.0);
    }
}
