//! Transducer negative log-likelihood over a decision-step lattice, its
//! brute-force enumeration oracle, and the Viterbi best path.
//!
//! The lattice is generic in what a decision step is — frames for RNN-T,
//! chunks for CHAT — so one loss serves both variants. The forward variable
//! follows the standard transducer recursion in log space:
//!
//!   alpha(s, u) = logaddexp(alpha(s-1, u) + logp[s-1][u][blank],
//!                           alpha(s, u-1) + logp[s][u-1][y_u])
//!
//! with alpha(0, 0) = 0 and out-of-range terms dropped, and
//! loss = -(alpha(S-1, U) + logp[S-1][U][blank]). Gradients flow through the
//! recorded graph; the oracle enumerates every alignment path instead.

use crate::numerics::{log_sum_exp_raw, Graph, Var};
use crate::{Error, Result};

/// Largest S + U the enumeration oracle accepts (path count grows as a
/// binomial in S + U).
pub const ORACLE_LIMIT: usize = 14;

/// Log-probabilities over decision steps x label positions x symbols, with
/// blank as the last symbol id. Cells produced by a joiner exponentiate to
/// one; the loss itself does not require normalization.
#[derive(Clone, Debug)]
pub struct JointLattice {
    steps: usize,
    label_slots: usize,
    symbols: usize,
    cells: Vec<Var>,
}

impl JointLattice {
    /// Assemble from per-(step, label) cells, each a [1, symbols] node,
    /// in step-major order.
    pub fn from_cells(
        steps: usize,
        label_slots: usize,
        symbols: usize,
        cells: Vec<Var>,
    ) -> Result<Self> {
        if steps == 0 || label_slots == 0 {
            return Err(Error::EmptyInput("lattice with zero extent"));
        }
        if symbols < 2 {
            return Err(Error::InvalidConfig(
                "lattice needs at least one real symbol plus blank".into(),
            ));
        }
        if cells.len() != steps * label_slots {
            return Err(Error::ShapeMismatch {
                op: "lattice",
                lhs: vec![steps, label_slots],
                rhs: vec![cells.len()],
            });
        }
        Ok(JointLattice {
            steps,
            label_slots,
            symbols,
            cells,
        })
    }

    /// Build leaf cells from flat values in [step][label][symbol] order.
    pub fn from_values(
        g: &mut Graph,
        steps: usize,
        label_slots: usize,
        symbols: usize,
        values: &[f64],
    ) -> Result<Self> {
        if values.len() != steps * label_slots * symbols {
            return Err(Error::ShapeMismatch {
                op: "lattice",
                lhs: vec![steps, label_slots, symbols],
                rhs: vec![values.len()],
            });
        }
        let mut cells = Vec::with_capacity(steps * label_slots);
        for chunk in values.chunks_exact(symbols) {
            cells.push(g.leaf(crate::numerics::Tensor::matrix(1, symbols, chunk.to_vec())?));
        }
        JointLattice::from_cells(steps, label_slots, symbols, cells)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn label_slots(&self) -> usize {
        self.label_slots
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn blank_id(&self) -> usize {
        self.symbols - 1
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols - 1
    }

    pub fn element_count(&self) -> usize {
        self.steps * self.label_slots * self.symbols
    }

    pub fn cell(&self, step: usize, label_pos: usize) -> Var {
        self.cells[step * self.label_slots + label_pos]
    }

    pub fn logp(&self, g: &Graph, step: usize, label_pos: usize, symbol: usize) -> f64 {
        g.data(self.cell(step, label_pos))[symbol]
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        if target.len() + 1 > self.label_slots {
            return Err(Error::ShapeMismatch {
                op: "lattice target",
                lhs: vec![self.label_slots],
                rhs: vec![target.len()],
            });
        }
        for &id in target {
            if id >= self.vocab_size() {
                return Err(Error::VocabOutOfRange {
                    id,
                    vocab: self.vocab_size(),
                });
            }
        }
        Ok(())
    }
}

/// One move of an alignment path: at state (step, label_pos) emit `symbol`.
/// Blank advances the step, a label advances the label position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathMove {
    pub step: usize,
    pub label_pos: usize,
    pub symbol: usize,
}

/// A complete alignment: S blanks and U labels from (0, 0) to absorption
/// after the final blank at (S-1, U).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentPath {
    pub moves: Vec<PathMove>,
}

impl AlignmentPath {
    pub fn blank_count(&self, blank_id: usize) -> usize {
        self.moves.iter().filter(|m| m.symbol == blank_id).count()
    }

    pub fn label_count(&self, blank_id: usize) -> usize {
        self.moves.len() - self.blank_count(blank_id)
    }

    /// Total log-probability of the path under a lattice.
    pub fn log_prob(&self, g: &Graph, lattice: &JointLattice) -> f64 {
        self.moves
            .iter()
            .map(|m| lattice.logp(g, m.step, m.label_pos, m.symbol))
            .sum()
    }
}

/// Negative log-likelihood of `target` under the lattice, summed over all
/// alignments by the forward recursion. Differentiable through the graph.
pub fn transducer_loss(g: &mut Graph, lattice: &JointLattice, target: &[usize]) -> Result<Var> {
    lattice.check_target(target)?;
    let s_max = lattice.steps;
    let u_max = target.len();
    let blank = lattice.blank_id();

    // alpha[u] holds alpha(s, u) for the current s while sweeping s upward.
    let mut alpha: Vec<Var> = Vec::with_capacity(u_max + 1);
    for s in 0..s_max {
        let mut next: Vec<Var> = Vec::with_capacity(u_max + 1);
        for u in 0..=u_max {
            // Blank arrival from (s-1, u).
            let from_blank = if s > 0 {
                let b = g.narrow(lattice.cell(s - 1, u), 1, blank, 1)?;
                Some(g.add(alpha[u], b)?)
            } else {
                None
            };
            // Label arrival from (s, u-1) emitting target[u-1].
            let from_label = if u > 0 {
                let y = g.narrow(lattice.cell(s, u - 1), 1, target[u - 1], 1)?;
                Some(g.add(next[u - 1], y)?)
            } else {
                None
            };
            let cell = match (from_blank, from_label) {
                (Some(b), Some(l)) => g.logaddexp(b, l)?,
                (Some(b), None) => b,
                (None, Some(l)) => l,
                (None, None) => g.leaf(crate::numerics::Tensor::matrix(1, 1, vec![0.0])?),
            };
            next.push(cell);
        }
        alpha = next;
    }

    let final_blank = g.narrow(lattice.cell(s_max - 1, u_max), 1, blank, 1)?;
    let total = g.add(alpha[u_max], final_blank)?;
    g.scale(total, -1.0)
}

/// Exhaustive alignment enumeration: sums every path's probability in log
/// space. The independent check on `transducer_loss`; only feasible for
/// S + U <= ORACLE_LIMIT.
pub fn oracle_loss(g: &Graph, lattice: &JointLattice, target: &[usize]) -> Result<f64> {
    lattice.check_target(target)?;
    let total = lattice.steps + target.len();
    if total > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            got: total,
            limit: ORACLE_LIMIT,
        });
    }
    let mut path_logps = Vec::new();
    enumerate_paths(
        g,
        lattice,
        target,
        0,
        0,
        0.0,
        &mut path_logps,
        &mut Vec::new(),
        &mut |_paths| {},
    );
    Ok(-log_sum_exp_raw(&path_logps))
}

/// Every complete alignment path, with its log-probability. Test support
/// for path-level assertions; same enumeration as `oracle_loss`.
pub fn enumerate_alignments(
    g: &Graph,
    lattice: &JointLattice,
    target: &[usize],
) -> Result<Vec<(AlignmentPath, f64)>> {
    lattice.check_target(target)?;
    let total = lattice.steps + target.len();
    if total > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            got: total,
            limit: ORACLE_LIMIT,
        });
    }
    let mut logps = Vec::new();
    let mut collected = Vec::new();
    enumerate_paths(
        g,
        lattice,
        target,
        0,
        0,
        0.0,
        &mut logps,
        &mut Vec::new(),
        &mut |path: &[PathMove]| {
            collected.push(AlignmentPath {
                moves: path.to_vec(),
            });
        },
    );
    Ok(collected.into_iter().zip(logps).collect())
}

#[allow(clippy::too_many_arguments)]
fn enumerate_paths(
    g: &Graph,
    lattice: &JointLattice,
    target: &[usize],
    s: usize,
    u: usize,
    acc: f64,
    out: &mut Vec<f64>,
    trail: &mut Vec<PathMove>,
    on_complete: &mut impl FnMut(&[PathMove]),
) {
    let blank = lattice.blank_id();
    if s == lattice.steps - 1 && u == target.len() {
        trail.push(PathMove {
            step: s,
            label_pos: u,
            symbol: blank,
        });
        out.push(acc + lattice.logp(g, s, u, blank));
        on_complete(trail);
        trail.pop();
        return;
    }
    if u < target.len() {
        let y = target[u];
        trail.push(PathMove {
            step: s,
            label_pos: u,
            symbol: y,
        });
        enumerate_paths(
            g,
            lattice,
            target,
            s,
            u + 1,
            acc + lattice.logp(g, s, u, y),
            out,
            trail,
            on_complete,
        );
        trail.pop();
    }
    if s < lattice.steps - 1 {
        trail.push(PathMove {
            step: s,
            label_pos: u,
            symbol: blank,
        });
        enumerate_paths(
            g,
            lattice,
            target,
            s + 1,
            u,
            acc + lattice.logp(g, s, u, blank),
            out,
            trail,
            on_complete,
        );
        trail.pop();
    }
}

/// Max-probability alignment under the same recursion with max instead of
/// logaddexp; ties break toward blank (advancing the step).
pub fn best_path(g: &Graph, lattice: &JointLattice, target: &[usize]) -> Result<AlignmentPath> {
    lattice.check_target(target)?;
    let s_max = lattice.steps;
    let u_max = target.len();
    let blank = lattice.blank_id();

    // delta[s][u]: best partial log-prob; choice[s][u]: true if the best
    // arrival was the blank from (s-1, u).
    let mut delta = vec![vec![f64::NEG_INFINITY; u_max + 1]; s_max];
    let mut from_blank = vec![vec![false; u_max + 1]; s_max];
    for s in 0..s_max {
        for u in 0..=u_max {
            if s == 0 && u == 0 {
                delta[0][0] = 0.0;
                continue;
            }
            let via_blank = if s > 0 {
                delta[s - 1][u] + lattice.logp(g, s - 1, u, blank)
            } else {
                f64::NEG_INFINITY
            };
            let via_label = if u > 0 {
                delta[s][u - 1] + lattice.logp(g, s, u - 1, target[u - 1])
            } else {
                f64::NEG_INFINITY
            };
            // Ties go to blank.
            if via_blank >= via_label {
                delta[s][u] = via_blank;
                from_blank[s][u] = true;
            } else {
                delta[s][u] = via_label;
                from_blank[s][u] = false;
            }
        }
    }

    let mut moves = vec![PathMove {
        step: s_max - 1,
        label_pos: u_max,
        symbol: blank,
    }];
    let (mut s, mut u) = (s_max - 1, u_max);
    while s > 0 || u > 0 {
        if from_blank[s][u] {
            s -= 1;
            moves.push(PathMove {
                step: s,
                label_pos: u,
                symbol: blank,
            });
        } else {
            u -= 1;
            moves.push(PathMove {
                step: s,
                label_pos: u,
                symbol: target[u],
            });
        }
    }
    moves.reverse();
    Ok(AlignmentPath { moves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{assert_close, finite_diff, max_rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Normalized random lattice values in [step][label][symbol] order.
    pub(crate) fn random_lattice_values(
        rng: &mut ChaCha8Rng,
        steps: usize,
        slots: usize,
        symbols: usize,
    ) -> Vec<f64> {
        let mut values = Vec::with_capacity(steps * slots * symbols);
        for _ in 0..steps * slots {
            let logits: Vec<f64> = (0..symbols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lse = log_sum_exp_raw(&logits);
            values.extend(logits.iter().map(|l| l - lse));
        }
        values
    }

    fn lattice_from(
        g: &mut Graph,
        steps: usize,
        slots: usize,
        symbols: usize,
        values: &[f64],
    ) -> JointLattice {
        JointLattice::from_values(g, steps, slots, symbols, values).unwrap()
    }

    #[test]
    fn single_forced_path() {
        // S = 1, U = 0: the only path is the final blank.
        let mut g = Graph::new();
        let lat = lattice_from(&mut g, 1, 1, 3, &[0.5f64.ln(), 0.2f64.ln(), 0.3f64.ln()]);
        let loss = transducer_loss(&mut g, &lat, &[]).unwrap();
        assert_close(g.scalar_value(loss), -(0.3f64.ln()), 1e-12, "forced path");
        assert_close(
            oracle_loss(&g, &lat, &[]).unwrap(),
            -(0.3f64.ln()),
            1e-12,
            "oracle forced path",
        );
    }

    #[test]
    fn s1_u1_single_path_product() {
        // p(y at (0,0)) = 0.6, p(blank at (0,1)) = 0.7: loss = -ln 0.42.
        let mut g = Graph::new();
        let values = [
            0.6f64.ln(), // (0,0) y
            0.4f64.ln(), // (0,0) blank
            0.3f64.ln(), // (0,1) y
            0.7f64.ln(), // (0,1) blank
        ];
        let lat = lattice_from(&mut g, 1, 2, 2, &values);
        let loss = transducer_loss(&mut g, &lat, &[0]).unwrap();
        assert_close(g.scalar_value(loss), -(0.42f64.ln()), 1e-12, "single path");
        assert_close(g.scalar_value(loss), 0.8675, 5e-5, "numeric value");
    }

    #[test]
    fn s2_u1_two_path_enumeration() {
        // Two alignments: y then two blanks, or blank, y, blank.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values = random_lattice_values(&mut rng, 2, 2, 3);
        let mut g = Graph::new();
        let lat = lattice_from(&mut g, 2, 2, 3, &values);
        let target = [1usize];
        let loss = transducer_loss(&mut g, &lat, &target).unwrap();

        let p = |s: usize, u: usize, k: usize| lat.logp(&g, s, u, k).exp();
        let blank = lat.blank_id();
        let expected = -(p(0, 0, 1) * p(0, 1, blank) * p(1, 1, blank)
            + p(0, 0, blank) * p(1, 0, 1) * p(1, 1, blank))
        .ln();
        assert_close(g.scalar_value(loss), expected, 1e-12, "two-path closed form");
        assert_close(
            oracle_loss(&g, &lat, &target).unwrap(),
            expected,
            1e-12,
            "oracle two-path",
        );
    }

    #[test]
    fn uniform_lattice_hand_enumeration() {
        // S = 2, U = 1, |V| = 1, all probabilities 1/2:
        // two paths, each (1/2)^3, total 1/4 -> loss = ln 4.
        let mut g = Graph::new();
        let half = 0.5f64.ln();
        let values = vec![half; 2 * 2 * 2];
        let lat = lattice_from(&mut g, 2, 2, 2, &values);
        let loss = transducer_loss(&mut g, &lat, &[0]).unwrap();
        assert_close(g.scalar_value(loss), 4.0f64.ln(), 1e-12, "uniform lattice");
        assert_close(
            oracle_loss(&g, &lat, &[0]).unwrap(),
            4.0f64.ln(),
            1e-12,
            "oracle uniform",
        );
    }

    #[test]
    fn pure_blank_target_is_blank_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let values = random_lattice_values(&mut rng, 3, 1, 4);
        let mut g = Graph::new();
        let lat = lattice_from(&mut g, 3, 1, 4, &values);
        let loss = transducer_loss(&mut g, &lat, &[]).unwrap();
        let expected: f64 = -(0..3).map(|s| lat.logp(&g, s, 0, lat.blank_id())).sum::<f64>();
        assert_close(g.scalar_value(loss), expected, 1e-12, "blank sum");
        assert_close(
            oracle_loss(&g, &lat, &[]).unwrap(),
            expected,
            1e-12,
            "oracle blank sum",
        );
    }

    #[test]
    fn oracle_matches_loss_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..60 {
            let steps = rng.random_range(1..=5);
            let u = rng.random_range(0..=5usize);
            let vocab = rng.random_range(1..=4);
            let symbols = vocab + 1;
            let values = random_lattice_values(&mut rng, steps, u + 1, symbols);
            let target: Vec<usize> = (0..u).map(|_| rng.random_range(0..vocab)).collect();

            let mut g = Graph::new();
            let lat = lattice_from(&mut g, steps, u + 1, symbols, &values);
            let loss = transducer_loss(&mut g, &lat, &target).unwrap();
            let oracle = oracle_loss(&g, &lat, &target).unwrap();
            assert_close(
                g.scalar_value(loss),
                oracle,
                1e-9,
                &format!("case {case}: S={steps} U={u} V={vocab}"),
            );
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (steps, u, symbols) = (3, 2, 3);
        let values = random_lattice_values(&mut rng, steps, u + 1, symbols);
        let target = [0usize, 1];

        let eval = |probe: &[f64]| {
            let mut g = Graph::new();
            let lat = lattice_from(&mut g, steps, u + 1, symbols, probe);
            let loss = transducer_loss(&mut g, &lat, &target).unwrap();
            g.scalar_value(loss)
        };
        let numeric = finite_diff(eval, &values, 1e-5);

        let mut g = Graph::new();
        let lat = lattice_from(&mut g, steps, u + 1, symbols, &values);
        let loss = transducer_loss(&mut g, &lat, &target).unwrap();
        g.backward(loss).unwrap();
        let mut analytic = Vec::new();
        for s in 0..steps {
            for slot in 0..=u {
                let cell = lat.cell(s, slot);
                match g.grad(cell) {
                    Some(grad) => analytic.extend_from_slice(grad),
                    None => analytic.extend(std::iter::repeat(0.0).take(symbols)),
                }
            }
        }
        assert!(max_rel_err(&analytic, &numeric, 1e-3) < 1e-4);
    }

    #[test]
    fn adding_mass_on_a_used_symbol_never_increases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for _ in 0..20 {
            let steps = rng.random_range(2..=4);
            let u = rng.random_range(1..=3usize);
            let symbols = 4;
            let mut values = random_lattice_values(&mut rng, steps, u + 1, symbols);
            let target: Vec<usize> = (0..u).map(|_| rng.random_range(0..3)).collect();

            let base = {
                let mut g = Graph::new();
                let lat = lattice_from(&mut g, steps, u + 1, symbols, &values);
                let loss = transducer_loss(&mut g, &lat, &target).unwrap();
                g.scalar_value(loss)
            };
            // Bump either a blank or the correct next label somewhere.
            let s = rng.random_range(0..steps);
            let slot = rng.random_range(0..=u);
            let symbol = if rng.random_range(0..2) == 0 || slot == u {
                symbols - 1
            } else {
                target[slot]
            };
            values[(s * (u + 1) + slot) * symbols + symbol] += 0.4;
            let bumped = {
                let mut g = Graph::new();
                let lat = lattice_from(&mut g, steps, u + 1, symbols, &values);
                let loss = transducer_loss(&mut g, &lat, &target).unwrap();
                g.scalar_value(loss)
            };
            assert!(
                bumped <= base + 1e-12,
                "loss rose from {base} to {bumped} after adding path mass"
            );
        }
    }

    #[test]
    fn loss_invariant_under_vocab_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (steps, u, vocab) = (3, 2, 4);
        let symbols = vocab + 1;
        let values = random_lattice_values(&mut rng, steps, u + 1, symbols);
        let target = [2usize, 0];
        // Relabel 0->3, 1->2, 2->0, 3->1 (blank fixed).
        let perm = [3usize, 2, 0, 1];

        let mut relabeled = vec![0.0; values.len()];
        for cell in 0..steps * (u + 1) {
            let base = cell * symbols;
            for (from, &to) in perm.iter().enumerate() {
                relabeled[base + to] = values[base + from];
            }
            relabeled[base + vocab] = values[base + vocab];
        }
        let new_target: Vec<usize> = target.iter().map(|&t| perm[t]).collect();

        let mut g = Graph::new();
        let lat = lattice_from(&mut g, steps, u + 1, symbols, &values);
        let a = transducer_loss(&mut g, &lat, &target).unwrap();
        let mut g2 = Graph::new();
        let lat2 = lattice_from(&mut g2, steps, u + 1, symbols, &relabeled);
        let b = transducer_loss(&mut g2, &lat2, &new_target).unwrap();
        assert_eq!(g.scalar_value(a).to_bits(), g2.scalar_value(b).to_bits());
    }

    #[test]
    fn best_path_unique_when_single_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let values = random_lattice_values(&mut rng, 1, 2, 3);
        let g_and_path = {
            let mut g = Graph::new();
            let lat = lattice_from(&mut g, 1, 2, 3, &values);
            let path = best_path(&g, &lat, &[1]).unwrap();
            (g, lat, path)
        };
        let (_, lat, path) = g_and_path;
        assert_eq!(
            path.moves,
            vec![
                PathMove { step: 0, label_pos: 0, symbol: 1 },
                PathMove { step: 0, label_pos: 1, symbol: lat.blank_id() },
            ]
        );
    }

    #[test]
    fn best_path_counts_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..25 {
            let steps = rng.random_range(1..=5);
            let u = rng.random_range(0..=4usize);
            let symbols = rng.random_range(2..=5);
            let values = random_lattice_values(&mut rng, steps, u + 1, symbols);
            let target: Vec<usize> = (0..u).map(|_| rng.random_range(0..symbols - 1)).collect();

            let mut g = Graph::new();
            let lat = lattice_from(&mut g, steps, u + 1, symbols, &values);
            let path = best_path(&g, &lat, &target).unwrap();
            assert_eq!(path.blank_count(lat.blank_id()), steps);
            assert_eq!(path.label_count(lat.blank_id()), u);

            // Viterbi path probability never exceeds the alignment sum.
            let loss = transducer_loss(&mut g, &lat, &target).unwrap();
            let total_logp = -g.scalar_value(loss);
            assert!(path.log_prob(&g, &lat) <= total_logp + 1e-12);

            // And matches the max over the explicit enumeration.
            let all = enumerate_alignments(&g, &lat, &target).unwrap();
            let best = all
                .iter()
                .map(|(_, lp)| *lp)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_close(path.log_prob(&g, &lat), best, 1e-12, "viterbi = max");
        }
    }

    #[test]
    fn enumerated_paths_have_exact_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values = random_lattice_values(&mut rng, 3, 3, 3);
        let mut g = Graph::new();
        let lat = lattice_from(&mut g, 3, 3, 3, &values);
        let target = [0usize, 1];
        let all = enumerate_alignments(&g, &lat, &target).unwrap();
        // Paths from (0,0) to (2,2): C(2+2, 2) = 6.
        assert_eq!(all.len(), 6);
        for (path, _) in &all {
            assert_eq!(path.blank_count(lat.blank_id()), 3);
            assert_eq!(path.label_count(lat.blank_id()), 2);
        }
    }

    #[test]
    fn rejects_out_of_vocab_targets() {
        let mut g = Graph::new();
        let values = vec![(1.0f64 / 3.0).ln(); 6];
        let lat = lattice_from(&mut g, 1, 2, 3, &values);
        assert!(matches!(
            transducer_loss(&mut g, &lat, &[2]),
            Err(Error::VocabOutOfRange { id: 2, vocab: 2 })
        ));
        // Too many labels for the lattice's slots.
        assert!(transducer_loss(&mut g, &lat, &[0, 1]).is_err());
    }

    #[test]
    fn oracle_refuses_oversized_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let steps = 10;
        let u = 5;
        let values = random_lattice_values(&mut rng, steps, u + 1, 2);
        let mut g = Graph::new();
        let lat = lattice_from(&mut g, steps, u + 1, 2, &values);
        let target = vec![0usize; u];
        assert!(matches!(
            oracle_loss(&g, &lat, &target),
            Err(Error::OracleTooLarge { got: 15, limit: 14 })
        ));
    }

    #[test]
    fn loss_handles_neg_infinity_cells() {
        // A zero-probability blank at (0,0) forces the label-first path.
        let mut g = Graph::new();
        let values = [
            0.9f64.ln(),
            f64::NEG_INFINITY, // blank at (0,0) impossible
            0.2f64.ln(),
            0.8f64.ln(),
        ];
        let lat = lattice_from(&mut g, 1, 2, 2, &values);
        let loss = transducer_loss(&mut g, &lat, &[0]).unwrap();
        assert_close(
            g.scalar_value(loss),
            -(0.9f64 * 0.8).ln(),
            1e-12,
            "neg-inf cell",
        );
    }
}
