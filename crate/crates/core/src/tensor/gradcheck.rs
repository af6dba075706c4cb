//! Central finite-difference checks of reverse-mode gradients (64-bit).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

const STEP: f64 = 1e-6;
/// Denominator floor so near-zero gradients are compared absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Picks up to `samples` distinct coordinates out of `sizes` (all of them
/// when there are fewer).
fn coordinates(sizes: &[usize], samples: usize, seed: u64) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = sizes.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |i| (t, i))).collect();
    if all.len() <= samples {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, all.len(), samples).into_iter().map(|k| all[k]).collect()
}

/// Checks d(loss)/d(inputs) where `f` builds a scalar from leaf inputs.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], samples: usize, seed: u64, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, Option<Vec<Vec<f64>>>), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape.value(loss).item(), Some(grads_of(&tape, loss, &vars, values)?)))
    };
    let (_, analytic) = eval(inputs)?;
    let analytic = analytic.expect("computed");
    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let mut worst: f64 = 0.0;
    let coords = coordinates(&sizes, samples, seed);
    let mut values = inputs.to_vec();
    for &(t, i) in &coords {
        let orig = values[t].data()[i];
        values[t].data_mut()[i] = orig + STEP;
        let plus = eval(&values)?.0;
        values[t].data_mut()[i] = orig - STEP;
        let minus = eval(&values)?.0;
        values[t].data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic[t][i], (plus - minus) / (2.0 * STEP)));
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked: coords.len(),
    })
}

fn grads_of(tape: &Tape<f64>, loss: Var, vars: &[Var], values: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>, TensorError> {
    let g = tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(values)
        .map(|(v, t)| g.wrt(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect())
}

/// Checks parameter gradients of a model-like `state` whose parameters live
/// in the store returned by `store_of`.
pub fn check_params<S, E, G, F>(state: &mut S, samples: usize, seed: u64, store_of: G, mut loss: F) -> Result<GradCheck, E>
where
    G: Fn(&mut S) -> &mut ParamStore<f64>,
    F: FnMut(&mut S, &mut Tape<f64>) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let l = loss(state, &mut tape)?;
    let grads = tape.backward(l)?;
    let store = store_of(state);
    let ids: Vec<ParamId> = store.ids().collect();
    let mut analytic: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; store.value(id).numel()]).collect();
    for (id, g) in grads.params() {
        for (a, b) in analytic[id.index()].iter_mut().zip(g) {
            *a += b;
        }
    }
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    let coords = coordinates(&sizes, samples, seed);
    let mut worst: f64 = 0.0;
    let mut eval = |state: &mut S| -> Result<f64, E> {
        let mut tape = Tape::new();
        let l = loss(state, &mut tape)?;
        Ok(tape.value(l).item())
    };
    for &(p, i) in &coords {
        let id = ids[p];
        let orig = store_of(state).value(id).data()[i];
        store_of(state).value_mut(id).data_mut()[i] = orig + STEP;
        let plus = eval(state)?;
        store_of(state).value_mut(id).data_mut()[i] = orig - STEP;
        let minus = eval(state)?;
        store_of(state).value_mut(id).data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic[p][i], (plus - minus) / (2.0 * STEP)));
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked: coords.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{BnMode, RunningStats};
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Contracts an arbitrary output with fixed random weights so every
    /// output element matters.
    fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
        let w = tape.leaf(random(tape.shape(y), seed));
        let prod = tape.mul(y, w)?;
        Ok(tape.sum(prod))
    }

    fn assert_ok(check: GradCheck, tol: f64) {
        assert!(check.checked > 0);
        assert!(check.max_rel_error < tol, "{check:?}");
    }

    #[test]
    fn conv_gradients() {
        let inputs = [random(&[2, 3, 5, 6], 1), random(&[4, 3, 3, 3], 2), random(&[4], 3)];
        for stride in [1, 2] {
            let c = check_inputs(&inputs, 200, 4, |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride)?;
                project(t, y, 5)
            })
            .unwrap();
            assert_ok(c, 1e-4);
        }
    }

    #[test]
    fn batch_norm_gradients() {
        let inputs = [random(&[3, 2, 4, 4], 6), random(&[2], 7), random(&[2], 8)];
        let c = check_inputs(&inputs, 150, 9, |t, v| {
            let mut stats = RunningStats::new(2);
            let y = t.batch_norm(v[0], v[1], v[2], &mut stats, BnMode::Train)?;
            project(t, y, 10)
        })
        .unwrap();
        assert_ok(c, 1e-4);
        let c = check_inputs(&inputs, 150, 9, |t, v| {
            let mut stats = RunningStats {
                mean: vec![0.1, -0.2],
                var: vec![0.5, 2.0],
            };
            let y = t.batch_norm(v[0], v[1], v[2], &mut stats, BnMode::Eval)?;
            project(t, y, 10)
        })
        .unwrap();
        assert_ok(c, 1e-4);
    }

    #[test]
    fn pooling_dense_and_elementwise_gradients() {
        let x = [random(&[2, 3, 4, 6], 11)];
        let pool = check_inputs(&x, 100, 1, |t, v| {
            let y = t.avg_pool2d(v[0])?;
            project(t, y, 2)
        });
        assert_ok(pool.unwrap(), 1e-4);
        let up = check_inputs(&x, 100, 1, |t, v| {
            let y = t.upsample2d(v[0])?;
            project(t, y, 3)
        });
        assert_ok(up.unwrap(), 1e-4);
        let dense = check_inputs(&[random(&[5, 7], 12), random(&[7, 3], 13)], 100, 1, |t, v| {
            let y = t.dense_unbiased(v[0], v[1])?;
            project(t, y, 4)
        });
        assert_ok(dense.unwrap(), 1e-4);
        let relu = check_inputs(&x, 100, 1, |t, v| {
            let y = t.relu(v[0]);
            project(t, y, 5)
        });
        assert_ok(relu.unwrap(), 1e-4);
        let soft = check_inputs(&x, 100, 1, |t, v| {
            let y = t.softmax(v[0], 1)?;
            project(t, y, 6)
        });
        assert_ok(soft.unwrap(), 1e-4);
        let pair = [random(&[3, 4], 14), random(&[3, 4], 15)];
        let arith = check_inputs(&pair, 100, 1, |t, v| {
            let a = t.add(v[0], v[1])?;
            let m = t.mul(a, v[1])?;
            let s = t.scale(m, -1.7);
            project(t, s, 7)
        });
        assert_ok(arith.unwrap(), 1e-4);
        let shaping = check_inputs(&pair, 100, 1, |t, v| {
            let c = t.concat(&[v[0], v[1]], 1)?;
            let r = t.reshape(c, vec![6, 4])?;
            let s = t.slice0(r, 1, 4)?;
            project(t, s, 8)
        });
        assert_ok(shaping.unwrap(), 1e-4);
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = [random(&[2, 6, 3, 3], 16)];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut target = vec![0.0; 2 * 6 * 9];
        for n in 0..2 {
            for g in 0..2 {
                for cell in 0..9 {
                    let c = rng.random_range(0..3);
                    target[((n * 6) + g * 3 + c) * 9 + cell] = 1.0;
                }
            }
        }
        let c = check_inputs(&logits, 108, 1, |t, v| {
            let grouped = t.reshape(v[0], vec![2, 2, 3, 3, 3])?;
            let p = t.softmax(grouped, 2)?;
            let p = t.reshape(p, vec![2, 6, 3, 3])?;
            t.weighted_cross_entropy(p, &target, &[10.0, 1.0, 1.0], 0.05)
        });
        assert_ok(c.unwrap(), 1e-4);
    }
}
