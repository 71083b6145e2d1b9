//! Finite-difference cases shared by the gradient suite and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segkc::losses::{
    consistency_loss, kd_loss, make_pseudo_labels, supervised_loss, total_loss, LossTerms, LossWeights,
};
use segkc::numerics::gradcheck::check;
use segkc::{LabelMap, Result, Tape, Tensor, Var, IGNORE_INDEX};

pub const TRIALS: u64 = 20;
pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so kinks stay out of the difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap()
}

fn labels(rng: &mut ChaCha8Rng, shape: [usize; 3], k: usize) -> LabelMap {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen_bool(0.15) { IGNORE_INDEX } else { rng.gen_range(0..k) as u8 })
        .collect();
    LabelMap::new(shape, data).unwrap()
}

/// Weighted sum so that every output element carries a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = randn(&mut rng(seed ^ 0x5eed), &shape);
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

pub type Objective = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
pub type Case = fn(u64) -> (Vec<Tensor>, Objective);

/// Largest relative error of a case over every seeded trial.
pub fn worst_error(case: Case) -> f64 {
    (0..TRIALS)
        .map(|seed| {
            let (inputs, f) = case(seed);
            check(f, &inputs, H).unwrap().max_rel_error
        })
        .fold(0.0, f64::max)
}

pub const CASES: &[(&str, Case)] = &[
    ("add", |s| {
    let mut r = rng(s);
    (vec![randn(&mut r, &[2, 3]), randn(&mut r, &[2, 3])], Box::new(move |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y, s)
    }))
}),
    ("sub", |s| {
    let mut r = rng(s);
    (vec![randn(&mut r, &[4]), randn(&mut r, &[4])], Box::new(move |t, v| {
        let y = t.sub(v[0], v[1])?;
        weighted_sum(t, y, s)
    }))
}),
    ("mul", |s| {
    let mut r = rng(s);
    (vec![randn(&mut r, &[3, 2]), randn(&mut r, &[3, 2])], Box::new(move |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y, s)
    }))
}),
    ("scale", |s| {
    let mut r = rng(s);
    let f = r.gen_range(-3.0..3.0);
    (vec![randn(&mut r, &[5])], Box::new(move |t, v| {
        let y = t.scale(v[0], f)?;
        weighted_sum(t, y, s)
    }))
}),
    ("relu", |s| {
    let mut r = rng(s);
    (vec![away_from_zero(&mut r, &[2, 4])], Box::new(move |t, v| {
        let y = t.relu(v[0])?;
        weighted_sum(t, y, s)
    }))
}),
    ("log", |s| {
    let mut r = rng(s);
    (vec![positive(&mut r, &[6])], Box::new(move |t, v| {
        let y = t.log(v[0])?;
        weighted_sum(t, y, s)
    }))
}),
    ("exp", |s| {
    let mut r = rng(s);
    (vec![randn(&mut r, &[6])], Box::new(move |t, v| {
        let y = t.exp(v[0])?;
        weighted_sum(t, y, s)
    }))
}),
    ("sum_axes", |s| {
    let mut r = rng(s);
    let axes: Vec<usize> = match s % 3 {
        0 => vec![1],
        1 => vec![0, 2],
        _ => vec![2, 3],
    };
    (vec![randn(&mut r, &[2, 3, 2, 2])], Box::new(move |t, v| {
        let y = t.sum_axes(v[0], &axes)?;
        weighted_sum(t, y, s)
    }))
}),
    ("mean_axes", |s| {
    let mut r = rng(s);
    (vec![randn(&mut r, &[2, 3, 4])], Box::new(move |t, v| {
        let y = t.mean_axes(v[0], &[1, 2])?;
        weighted_sum(t, y, s)
    }))
}),
    ("mean", |s| {
    let mut r = rng(s);
    (vec![randn(&mut r, &[3, 3])], Box::new(move |t, v| {
        let sq = t.mul(v[0], v[0])?;
        t.mean(sq)
    }))
}),
    ("concat_channels", |s| {
    let mut r = rng(s);
    (vec![randn(&mut r, &[2, 1, 2, 3]), randn(&mut r, &[2, 3, 2, 3])], Box::new(move |t, v| {
        let y = t.concat_channels(&[v[0], v[1]])?;
        weighted_sum(t, y, s)
    }))
}),
    ("bias_add", |s| {
    let mut r = rng(s);
    (vec![randn(&mut r, &[2, 3, 2, 2]), randn(&mut r, &[3])], Box::new(move |t, v| {
        let y = t.bias_add(v[0], v[1])?;
        weighted_sum(t, y, s)
    }))
}),
    ("bilinear_resize", |s| {
    let mut r = rng(s);
    let (oh, ow) = [(7, 5), (2, 3), (8, 8), (3, 9)][s as usize % 4];
    (vec![randn(&mut r, &[1, 2, 4, 5])], Box::new(move |t, v| {
        let y = t.bilinear_resize(v[0], oh, ow)?;
        weighted_sum(t, y, s)
    }))
}),
    ("conv2d", |s| {
    let mut r = rng(s);
    let stride = 1 + (s as usize % 2);
    let k = [1, 3][s as usize / 2 % 2];
    let padding = if s % 3 == 0 { 0 } else { k / 2 };
    let input = randn(&mut r, &[2, 3, 5, 6]);
    let kernel = randn(&mut r, &[4, 3, k, k]);
    (vec![input, kernel], Box::new(move |t, v| {
        let y = t.conv2d(v[0], v[1], stride, padding)?;
        weighted_sum(t, y, s)
    }))
}),
    ("softmax_t", |s| {
    let mut r = rng(s);
    let temp = r.gen_range(0.5..3.0);
    (vec![randn(&mut r, &[2, 4, 2, 2])], Box::new(move |t, v| {
        let y = t.softmax_t(v[0], 1, temp)?;
        weighted_sum(t, y, s)
    }))
}),
    ("log_softmax_t", |s| {
    let mut r = rng(s);
    let temp = r.gen_range(0.5..3.0);
    let axis = s as usize % 2;
    (vec![randn(&mut r, &[3, 4])], Box::new(move |t, v| {
        let y = t.log_softmax_t(v[0], axis, temp)?;
        weighted_sum(t, y, s)
    }))
}),
    ("supervised_loss", |s| {
    let mut r = rng(s);
    let logits = randn(&mut r, &[2, 4, 3, 3]);
    let l = labels(&mut r, [2, 3, 3], 4);
    (vec![logits], Box::new(move |t, v| supervised_loss(t, v[0], &l, IGNORE_INDEX)))
}),
    ("consistency_loss", |s| {
    let mut r = rng(s);
    let logits = randn(&mut r, &[2, 3, 3, 3]);
    let peer = randn(&mut r, &[2, 3, 3, 3]).data().iter().map(|v| v * 4.0).collect();
    let peer = Tensor::new(vec![2, 3, 3, 3], peer).unwrap();
    let pseudo = make_pseudo_labels(&peer, 0.6).unwrap();
    (vec![logits], Box::new(move |t, v| consistency_loss(t, v[0], &pseudo)))
}),
    ("kd_loss (senior detached)", |s| {
    let mut r = rng(s);
    let senior = randn(&mut r, &[2, 4, 2, 2]);
    let junior = randn(&mut r, &[2, 4, 2, 2]);
    let temp = r.gen_range(0.5..4.0);
    (vec![junior], Box::new(move |t, v| {
        let sr = t.constant(senior.clone());
        kd_loss(t, sr, v[0], temp, true)
    }))
}),
    ("kd_loss (coupled)", |s| {
    let mut r = rng(s);
    let temp = r.gen_range(0.5..4.0);
    (vec![randn(&mut r, &[1, 3, 3, 2]), randn(&mut r, &[1, 3, 3, 2])], Box::new(move |t, v| {
        kd_loss(t, v[0], v[1], temp, false)
    }))
}),
    ("total_loss", |s| {
    let mut r = rng(s);
    let shape = [2, 3, 2, 3];
    let (sl, jl) = (randn(&mut r, &shape), randn(&mut r, &shape));
    let (su, ju) = (randn(&mut r, &shape), randn(&mut r, &shape));
    let truth = labels(&mut r, [2, 2, 3], 3);
    let from_senior = make_pseudo_labels(&su, 0.4).unwrap();
    let from_junior = make_pseudo_labels(&ju, 0.4).unwrap();
    let weights = LossWeights {
        lambda1: r.gen_range(0.1..2.0),
        lambda2: r.gen_range(0.1..2.0),
        lambda3: r.gen_range(0.1..2.0),
    };
    (vec![sl, jl, su, ju], Box::new(move |t, v| {
        let terms = LossTerms {
            sup_sr: supervised_loss(t, v[0], &truth, IGNORE_INDEX)?,
            sup_jr: supervised_loss(t, v[1], &truth, IGNORE_INDEX)?,
            con_sr: consistency_loss(t, v[2], &from_junior)?,
            con_jr: consistency_loss(t, v[3], &from_senior)?,
            kd: kd_loss(t, v[2], v[3], 2.0, false)?,
        };
        total_loss(t, &terms, &weights)
    }))
}),
    ("conv-relu-head-resize-ce", |s| {
    let mut r = rng(s);
    let image = randn(&mut r, &[1, 2, 4, 4]);
    let truth = labels(&mut r, [1, 4, 4], 3);
    let w1 = randn(&mut r, &[3, 2, 3, 3]);
    let b1 = Tensor::new(vec![3], vec![0.3, 0.4, 0.5]).unwrap();
    let w2 = randn(&mut r, &[3, 3, 1, 1]);
    let b2 = randn(&mut r, &[3]);
    (vec![w1, b1, w2, b2], Box::new(move |t, v| {
        let x = t.constant(image.clone());
        let y = t.conv2d(x, v[0], 2, 1)?;
        let y = t.bias_add(y, v[1])?;
        let y = t.relu(y)?;
        let y = t.conv2d(y, v[2], 1, 0)?;
        let y = t.bias_add(y, v[3])?;
        let y = t.bilinear_resize(y, 4, 4)?;
        supervised_loss(t, y, &truth, IGNORE_INDEX)
    }))
}),
];
