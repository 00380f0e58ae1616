use npclab_core::data::{generate_dataset, SyntheticDatasetSpec};
use npclab_core::hardness::{hardness_correlation, HardMask};
use npclab_core::model::{Activation, Mlp, ModelSpec};
use npclab_core::seed::rng;
use npclab_core::train::{evaluate_model, train, ExperimentConfig};
use npclab_core::{CosineMatrix, Labels, LossConfig, LossVariant, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn uncrowded_centers_look_uniform() {
    let dim = 12;
    let spec = SyntheticDatasetSpec {
        n_classes: 450,
        samples_per_class: 1,
        input_dim: dim,
        concentration: 10.0,
        crowding: 0.0,
        min_center_cosine: 0.9,
        seed: 3,
    };
    let data = generate_dataset(&spec).unwrap();
    let c = &data.centers;
    let mut got = Vec::new();
    for i in 0..c.rows() {
        for j in i + 1..c.rows() {
            got.push(c.row(i).iter().zip(c.row(j)).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    // reference: 1e5 pairs of independently normalized Gaussian vectors
    let mut r = rng(77);
    let mut draw = || {
        let v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let reference: Vec<f64> = (0..100_000)
        .map(|_| {
            let (a, b) = (draw(), draw());
            a.iter().zip(&b).map(|(x, y)| x * y).sum()
        })
        .collect();
    let (gm, gv) = mean_var(&got);
    let (rm, rv) = mean_var(&reference);
    assert!(gm.abs() < 0.01 && (gm - rm).abs() < 0.01, "mean {gm} vs {rm}");
    assert!((gv / rv - 1.0).abs() < 0.05, "variance {gv} vs {rv}");
    assert!((rv - 1.0 / dim as f64).abs() < 0.005);
}

#[test]
fn model_forward_matches_scalar_loops() {
    for activation in [Activation::Relu, Activation::Tanh] {
        let spec = ModelSpec {
            layer_widths: vec![4, 6, 5, 3],
            activation,
            init_scale: 1.5,
            seed: 8,
        };
        let model = Mlp::init(&spec).unwrap();
        let mut r = rng(9);
        let x = Matrix::from_vec(7, 4, (0..28).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
        let got = model.embed(&x).unwrap();
        let n_layers = model.layers().len();
        for i in 0..x.rows() {
            let mut h: Vec<f64> = x.row(i).to_vec();
            for (l, layer) in model.layers().iter().enumerate() {
                let mut z = vec![0.0; layer.weight.rows()];
                for (o, zo) in z.iter_mut().enumerate() {
                    *zo = layer.bias[o];
                    for (k, hk) in h.iter().enumerate() {
                        *zo += layer.weight[(o, k)] * hk;
                    }
                }
                if l + 1 < n_layers {
                    for v in z.iter_mut() {
                        *v = match activation {
                            Activation::Relu => v.max(0.0),
                            Activation::Tanh => v.tanh(),
                        };
                    }
                }
                h = z;
            }
            for (c, want) in h.iter().enumerate() {
                assert!((got[(i, c)] - want).abs() < 1e-12);
            }
        }
    }
}

fn small_config(variant: LossVariant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.n_classes = 2;
    cfg.dataset.samples_per_class = 32;
    cfg.dataset.input_dim = 4;
    cfg.dataset.concentration = 50.0;
    cfg.dataset.crowding = 0.0;
    cfg.model.layer_widths = vec![4, 8, 3];
    cfg.loss = LossConfig::new(variant);
    cfg.schedule.total_epochs = 10;
    cfg.schedule.milestones = vec![6, 8];
    cfg.schedule.batch_size = 16;
    cfg.schedule.lr_initial = 0.05;
    cfg.eval.n_classes = 10;
    cfg.eval.samples_per_class = 3;
    cfg.eval.n_positive_pairs = 20;
    cfg.eval.n_negative_pairs = 100;
    cfg.eval.n_distractors = 5;
    cfg.eval.folds = 4;
    cfg
}

#[test]
fn two_separated_classes_are_learned() {
    let cfg = small_config(LossVariant::NormSoftmax);
    let out = train(&cfg).unwrap();
    let last = out.log.epochs.last().unwrap();
    assert_eq!(last.train_accuracy, 1.0);
    assert!(last.mean_loss < out.log.epochs[0].mean_loss);
    assert_eq!(out.log.iterations.len(), 10 * 4);
}

#[test]
fn training_and_evaluation_are_deterministic() {
    for v in [LossVariant::NpcFace, LossVariant::MvSoftmax] {
        let cfg = small_config(v);
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            evaluate_model(&a.model, &cfg).unwrap(),
            evaluate_model(&b.model, &cfg).unwrap()
        );
        let mut other = cfg.clone();
        other.reseed(cfg.seed + 1);
        assert_ne!(train(&other).unwrap().log, a.log);
    }
}

#[test]
fn hardness_correlation_matches_two_pass_pearson() {
    let mut r = rng(21);
    let (n, c) = (50, 6);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
    let cos: Vec<f64> = (0..n * c).map(|_| r.random_range(-1.0..1.0)).collect();
    let cosm = CosineMatrix::from_matrix(Matrix::from_vec(n, c, cos.clone()).unwrap());
    let labels = Labels::new(labels, c).unwrap();
    let all: Vec<Vec<bool>> = (0..n).map(|i| (0..c).map(|j| j != labels[i]).collect()).collect();
    let mask = HardMask::from_rows(&all, &labels).unwrap();
    let report = hardness_correlation(&cosm, &labels, &mask).unwrap();

    let pos: Vec<f64> = (0..n).map(|i| 1.0 - cos[i * c + labels[i]]).collect();
    let neg: Vec<f64> = (0..n)
        .map(|i| {
            let best = (0..c)
                .filter(|&j| j != labels[i])
                .map(|j| cos[i * c + j])
                .fold(f64::MIN, f64::max);
            1.0 - best
        })
        .collect();
    let (mp, _) = mean_var(&pos);
    let (mn, _) = mean_var(&neg);
    let sxy: f64 = pos.iter().zip(&neg).map(|(a, b)| (a - mp) * (b - mn)).sum();
    let sxx: f64 = pos.iter().map(|a| (a - mp).powi(2)).sum();
    let syy: f64 = neg.iter().map(|b| (b - mn).powi(2)).sum();
    let want = sxy / (sxx * syy).sqrt();
    assert!((report.pearson_r - want).abs() < 1e-12);
    assert_eq!(report.n_misclassified, n);
}
