use graspkg_core::dataset::{generate_synthetic, EmbeddingTable, SyntheticConfig};
use graspkg_core::graph::normalize_adjacency;
use graspkg_core::model::{gcn_layer_on_tape, prepare_samples, GcnGraspModel, GcnScorer, GraphContext, GraspScorer, ModelConfig};
use graspkg_core::rng::{self, SeededRng};
use graspkg_core::tensor::{finite_difference_check, CoordSelection, GradCheckReport, Tape, Tensor, Var};
use graspkg_core::Result;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn randn(r: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng::normal(r)).collect()).unwrap()
}

fn uniform(r: &mut SeededRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng::uniform_range(r, lo, hi)).collect()).unwrap()
}

/// Reduces any tensor to a scalar through fixed random weights so every
/// output entry gets a distinct upstream gradient.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut r = rng::seeded(seed);
    let w = tape.constant(Tensor::new(shape, (0..n).map(|_| rng::normal(&mut r)).collect())?);
    let y = tape.mul(x, w)?;
    tape.sum(y)
}

fn check<F>(name: &str, f: F, point: &[Tensor]) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let r = finite_difference_check(f, point, H, CoordSelection::All).unwrap();
    assert!(r.max_rel_error < TOL, "{name}: {r:?}");
    assert!(r.checked > 0, "{name}: nothing checked");
    r
}

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..SEEDS {
        let mut r = rng::seeded(seed);
        let a = randn(&mut r, 3, 4);
        let b = randn(&mut r, 4, 2);
        let c = randn(&mut r, 3, 4);
        let row = randn(&mut r, 1, 4);
        let s = seed + 1000;

        check("matmul", |t, v| { let y = t.matmul(v[0], v[1])?; project(t, y, s) }, &[a.clone(), b.clone()]);
        check("add", |t, v| { let y = t.add(v[0], v[1])?; project(t, y, s) }, &[a.clone(), c.clone()]);
        check("add_broadcast", |t, v| { let y = t.add(v[0], v[1])?; project(t, y, s) }, &[a.clone(), row.clone()]);
        check("mul", |t, v| { let y = t.mul(v[0], v[1])?; project(t, y, s) }, &[a.clone(), c.clone()]);
        check("scale", |t, v| { let y = t.scale(v[0], -1.7)?; project(t, y, s) }, &[a.clone()]);
        check("relu", |t, v| { let y = t.relu(v[0])?; project(t, y, s) }, &[a.clone()]);
        check("sigmoid", |t, v| { let y = t.sigmoid(v[0])?; project(t, y, s) }, &[a.clone()]);
        check("concat_rows", |t, v| { let y = t.concat_rows(&[v[0], v[1]])?; project(t, y, s) }, &[a.clone(), row.clone()]);
        check("concat_cols", |t, v| { let y = t.concat_cols(&[v[0], v[1]])?; project(t, y, s) }, &[a.clone(), c.clone()]);
        check("gather_rows", |t, v| { let y = t.gather_rows(v[0], &[2, 0, 2])?; project(t, y, s) }, &[a.clone()]);
        let tall = randn(&mut r, 6, 3);
        check("max_pool_rows", |t, v| { let y = t.max_pool_rows(v[0], 3)?; project(t, y, s) }, &[tall.clone()]);
        check("max_pool_segments", |t, v| { let y = t.max_pool_segments(v[0], &[0, 1, 4, 6])?; project(t, y, s) }, &[tall]);
        check("mean", |t, v| { let y = t.mean(v[0])?; project(t, y, s) }, &[a.clone()]);
        check("sum", |t, v| { let y = t.sum(v[0])?; project(t, y, s) }, &[a.clone()]);

        let p = uniform(&mut r, 5, 1, 0.05, 0.95);
        let labels: Vec<f64> = (0..5).map(|i| ((i + seed as usize) % 2) as f64).collect();
        let weights: Vec<f64> = (0..5).map(|_| rng::uniform_range(&mut r, 0.2, 2.0)).collect();
        check("bce", |t, v| t.bce(v[0], &labels), &[p.clone()]);
        check("weighted_bce", |t, v| t.weighted_bce(v[0], &labels, &weights), &[p]);
    }
}

fn random_graph(r: &mut SeededRng, n: usize) -> Tensor {
    let mut a = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in i + 1..n {
            if rng::uniform(r) < 0.5 {
                a.data_mut()[i * n + j] = 1.0;
                a.data_mut()[j * n + i] = 1.0;
            }
        }
    }
    a
}

#[test]
fn gcn_layer_on_four_nodes() {
    for seed in 0..SEEDS {
        let mut r = rng::seeded(seed);
        let a_hat = normalize_adjacency(&random_graph(&mut r, 4)).unwrap();
        let h = randn(&mut r, 4, 5);
        let w = randn(&mut r, 5, 3);
        check(
            "gcn_layer",
            |t, v| {
                let a = t.constant(a_hat.clone());
                let y = gcn_layer_on_tape(t, v[0], a, v[1])?;
                t.mean(y)
            },
            &[h, w],
        );
    }
}

#[test]
fn full_desk_model_with_bce() {
    let cfg = SyntheticConfig {
        n_objects: 2,
        n_classes: 2,
        grasps_per_object: 4,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&cfg, 3).unwrap();
    let model_cfg = ModelConfig::desk();
    let samples = prepare_samples(&ds, &model_cfg.encoder, 512).unwrap();
    let table = EmbeddingTable::pseudo(ds.ontology.vocabulary(), model_cfg.embedding_dim(), 0).unwrap();
    let ctx = GraphContext::new(&ds.ontology, &table, model_cfg.variant, model_cfg.include_instances).unwrap();
    let mut total_checked = 0;
    for seed in 0..SEEDS {
        let sample = &samples[seed as usize % samples.len()];
        let (task, &label) = sample.labels.iter().nth(seed as usize % sample.labels.len()).unwrap();
        let scorer = GcnScorer {
            model: GcnGraspModel::new(model_cfg.clone(), seed).unwrap(),
            ctx: &ctx,
        };
        let r = finite_difference_check(
            |t, v| {
                let s = scorer.record(t, v, &sample.plan, &sample.object_id, &sample.class, &[task.as_str()])?;
                t.bce(s[0], &[if label { 1.0 } else { 0.0 }])
            },
            scorer.params(),
            H,
            CoordSelection::Sample { per_tensor: 2, seed },
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
        total_checked += r.checked;
    }
    assert!(total_checked > 20 * 40, "only {total_checked} coordinates checked");
}
