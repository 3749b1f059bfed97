//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

/// Outcome for one function: the worst norm-wise relative error over inputs.
#[derive(Debug, Clone)]
pub struct Report {
    pub max_rel_err: f64,
    pub per_input: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with a floor on the denominator so that two
/// vanishing gradients compare as equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

/// Differentiates `f` with respect to every input and compares with central
/// differences of step [`STEP`]. Non-scalar outputs are reduced by a fixed
/// random projection drawn from `seed`.
pub fn check<F>(inputs: &[Tensor], seed: u64, f: F) -> Result<Report>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let mut projection: Option<Tensor> = None;
    let mut eval = |vals: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = vals.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&g, &vars)?;
        let loss = if out.value().numel() == 1 {
            out.sum()
        } else {
            let r = projection.get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let shape = out.shape();
                let n = shape.iter().product();
                let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                Tensor::from_vec(&shape, data).expect("projection shape")
            });
            out.mul(&g.input(r.clone()))?.sum()
        };
        let value = loss.item();
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(loss)?;
        let gs = vars
            .iter()
            .map(|v| {
                grads
                    .wrt(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&v.shape()))
            })
            .collect();
        Ok((value, gs))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut numeric = vec![0.0; inputs[i].numel()];
        for j in 0..numeric.len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let (fp, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig - STEP;
            let (fm, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig;
            numeric[j] = (fp - fm) / (2.0 * STEP);
        }
        per_input.push(relative_error(analytic[i].data(), &numeric));
    }
    let max_rel_err = per_input.iter().copied().fold(0.0, f64::max);
    Ok(Report {
        max_rel_err,
        per_input,
    })
}

/// Worst relative error seen for one operation across its random cases.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub op: &'static str,
    pub cases: usize,
    pub worst: f64,
}

/// Random values kept away from zero so finite differences never straddle
/// a kink of abs/ReLU-like functions.
fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            if v.abs() < 1e-2 {
                0.1f64.copysign(v)
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

type CaseFn = fn(&mut ChaCha8Rng, u64) -> Result<f64>;

fn pick(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    use rand::Rng;
    rng.random_range(lo..=hi)
}

fn case_conv(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let (n, c, o) = (pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3));
    let k = [1, 3][pick(rng, 0, 1)];
    let (stride, pad) = (pick(rng, 1, 2), pick(rng, 0, k / 2 + 1));
    let (h, w) = (pick(rng, k, 6), pick(rng, k, 6));
    let x = random_tensor(rng, &[n, c, h, w]);
    let wt = random_tensor(rng, &[o, c, k, k]);
    let b = random_tensor(rng, &[o]);
    Ok(check(&[x, wt, b], seed, move |_, v| v[0].conv2d(&v[1], Some(&v[2]), stride, pad))?.max_rel_err)
}

fn image(rng: &mut ChaCha8Rng) -> Tensor {
    let shape = [pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 5)];
    random_tensor(rng, &shape)
}

fn case_leaky(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&[image(rng)], seed, |_, v| Ok(v[0].leaky_relu(0.2)))?.max_rel_err)
}

fn case_prelu(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let x = image(rng);
    let a = random_tensor(rng, &[x.shape()[1]]);
    Ok(check(&[x, a], seed, |_, v| v[0].prelu(&v[1]))?.max_rel_err)
}

fn case_bn_train(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let c = pick(rng, 1, 3);
    let shape = [pick(rng, 2, 3), c, pick(rng, 1, 4), pick(rng, 1, 4)];
    let x = random_tensor(rng, &shape);
    let (g, b) = (random_tensor(rng, &[c]), random_tensor(rng, &[c]));
    Ok(check(&[x, g, b], seed, |_, v| Ok(v[0].batch_norm_train(&v[1], &v[2])?.0))?.max_rel_err)
}

fn case_bn_eval(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let x = image(rng);
    let c = x.shape()[1];
    let (g, b) = (random_tensor(rng, &[c]), random_tensor(rng, &[c]));
    let mean = random_tensor(rng, &[c]).into_data();
    let var: Vec<f64> = random_tensor(rng, &[c]).data().iter().map(|v| v.abs() + 0.5).collect();
    Ok(check(&[x, g, b], seed, move |_, v| v[0].batch_norm_eval(&v[1], &v[2], &mean, &var))?.max_rel_err)
}

fn case_shuffle(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let r = pick(rng, 1, 3);
    let shape = [pick(rng, 1, 2), pick(rng, 1, 2) * r * r, pick(rng, 1, 3), pick(rng, 1, 3)];
    let x = random_tensor(rng, &shape);
    Ok(check(&[x], seed, move |_, v| v[0].pixel_shuffle(r))?.max_rel_err)
}

fn case_unshuffle(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let r = pick(rng, 1, 3);
    let shape = [pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 3) * r, pick(rng, 1, 3) * r];
    let x = random_tensor(rng, &shape);
    Ok(check(&[x], seed, move |_, v| v[0].pixel_unshuffle(r))?.max_rel_err)
}

fn case_dense(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let (n, fin, fout) = (pick(rng, 1, 3), pick(rng, 1, 6), pick(rng, 1, 5));
    let x = random_tensor(rng, &[n, fin]);
    let w = random_tensor(rng, &[fout, fin]);
    let b = random_tensor(rng, &[fout]);
    Ok(check(&[x, w, b], seed, |_, v| v[0].dense(&v[1], Some(&v[2])))?.max_rel_err)
}

fn case_spectral(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let shape = [pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)];
    let w = random_tensor(rng, &shape);
    let u0 = random_tensor(rng, &[shape[0]]);
    let it = crate::ops::spectral::power_iterate(&w, u0.data(), 2)?;
    let (u, vv) = (it.u, it.v);
    Ok(check(&[w], seed, move |_, v| v[0].spectral_normalize(&u, &vv))?.max_rel_err)
}

fn case_nearest(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let s = pick(rng, 1, 3);
    Ok(check(&[image(rng)], seed, move |_, v| v[0].upsample_nearest(s))?.max_rel_err)
}

fn case_bilinear(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let s = pick(rng, 1, 3);
    Ok(check(&[image(rng)], seed, move |_, v| v[0].upsample_bilinear(s))?.max_rel_err)
}

fn case_max_pool(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let shape = [pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 2, 5), pick(rng, 2, 5)];
    let x = random_tensor(rng, &shape);
    Ok(check(&[x], seed, |_, v| v[0].max_pool2())?.max_rel_err)
}

fn pair(rng: &mut ChaCha8Rng) -> [Tensor; 2] {
    let a = image(rng);
    let b = random_tensor(rng, a.shape());
    [a, b]
}

fn case_add(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&pair(rng), seed, |_, v| v[0].add(&v[1]))?.max_rel_err)
}

fn case_sub(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&pair(rng), seed, |_, v| v[0].sub(&v[1]))?.max_rel_err)
}

fn case_mul(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&pair(rng), seed, |_, v| v[0].mul(&v[1]))?.max_rel_err)
}

fn case_scale(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let k: f64 = StandardNormal.sample(rng);
    Ok(check(&[image(rng)], seed, move |_, v| Ok(v[0].scale(k).add_scalar(k)))?.max_rel_err)
}

fn case_sub_scalar(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let x = image(rng);
    let s = random_tensor(rng, &[1]);
    Ok(check(&[x, s], seed, |_, v| v[0].sub_scalar(&v[1]))?.max_rel_err)
}

fn case_concat(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let (n, h, w) = (pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4));
    let parts: Vec<Tensor> = (0..pick(rng, 1, 3))
        .map(|_| {
            let c = pick(rng, 1, 3);
            random_tensor(rng, &[n, c, h, w])
        })
        .collect();
    Ok(check(&parts, seed, |_, v| Var::concat(v))?.max_rel_err)
}

fn case_reshape(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&[image(rng)], seed, |_, v| v[0].flatten())?.max_rel_err)
}

fn case_abs(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&[image(rng)], seed, |_, v| Ok(v[0].abs()))?.max_rel_err)
}

fn case_softplus(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&[image(rng)], seed, |_, v| Ok(v[0].scale(3.0).softplus()))?.max_rel_err)
}

fn case_sigmoid(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&[image(rng)], seed, |_, v| Ok(v[0].scale(3.0).sigmoid()))?.max_rel_err)
}

fn case_mean(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&[image(rng)], seed, |_, v| Ok(v[0].mul(&v[0])?.mean()))?.max_rel_err)
}

fn case_sum(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    Ok(check(&[image(rng)], seed, |_, v| Ok(v[0].mul(&v[0])?.sum()))?.max_rel_err)
}

/// Every differentiable operation of the crate.
pub const OPERATIONS: &[(&str, CaseFn)] = &[
    ("conv2d", case_conv),
    ("leaky_relu", case_leaky),
    ("prelu", case_prelu),
    ("batch_norm_train", case_bn_train),
    ("batch_norm_eval", case_bn_eval),
    ("pixel_shuffle", case_shuffle),
    ("pixel_unshuffle", case_unshuffle),
    ("dense", case_dense),
    ("spectral_normalize", case_spectral),
    ("upsample_nearest", case_nearest),
    ("upsample_bilinear", case_bilinear),
    ("max_pool2", case_max_pool),
    ("add", case_add),
    ("sub", case_sub),
    ("mul", case_mul),
    ("scale_add_scalar", case_scale),
    ("sub_scalar", case_sub_scalar),
    ("concat", case_concat),
    ("reshape", case_reshape),
    ("abs", case_abs),
    ("softplus", case_softplus),
    ("sigmoid", case_sigmoid),
    ("mean", case_mean),
    ("sum", case_sum),
];

/// Runs `cases` randomized gradient checks per operation.
pub fn op_suite(cases: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OPERATIONS
        .iter()
        .map(|&(op, case)| {
            let mut worst: f64 = 0.0;
            for i in 0..cases {
                worst = worst.max(case(&mut rng, seed ^ i as u64)?);
            }
            Ok(SuiteEntry { op, cases, worst })
        })
        .collect()
}
