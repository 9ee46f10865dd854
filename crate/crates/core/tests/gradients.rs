//! Central-difference checks of every learned block and the full bound.

use ggik::cvae::{elbo_terms, Batch, CvaeConfig, GgikModel};
use ggik::data::suite_chain;
use ggik::egnn::{egnn_layer, baseline_mpnn_layer, init_layer, Arch, GraphBatch, GraphState, LayerConfig};
use ggik::graph::{complete_graph, partial_graph};
use ggik::kinematics::{KinematicChain, Pose};
use ggik::tensor::{check_gradients, GradCheck, ModelParams, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Checks only the parameters whose names contain `part`; the rest are held fixed.
fn check_part<F>(all: &ModelParams, part: &str, f: F) -> GradCheck
where
    F: Fn(&Tape, &ModelParams) -> ggik::tensor::Result<Var>,
{
    let mut sub = ModelParams::new(all.version);
    let mut rest = ModelParams::new(all.version);
    for (n, t) in all.iter() {
        if n.contains(part) {
            sub.insert(n.clone(), t.clone());
        } else {
            rest.insert(n.clone(), t.clone());
        }
    }
    assert!(!sub.is_empty(), "no parameters match {part}");
    check_gradients(&sub, H, None, |t, p| {
        let mut merged = rest.clone();
        merged.extend_prefixed("", p.clone());
        f(t, &merged)
    })
    .unwrap()
}

fn layer_setup(arch: Arch) -> (LayerConfig, GraphBatch, Tensor, Tensor, Tensor, Tensor, ModelParams) {
    let chain = suite_chain("spatial-4r").unwrap();
    let g = partial_graph(&chain, &chain.forward_kinematics(&chain.random_config(3)).unwrap()).unwrap();
    let cfg = LayerConfig { arch, hidden: 5, message: 4, dim: 3, dist_norm: 2.0 };
    let batch = GraphBatch::new(&[&g, &g], 1.0);
    let n = batch.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pos = random(&mut rng, n, 3);
    let hid = random(&mut rng, n, 5);
    let wp = random(&mut rng, n, 3);
    let wh = random(&mut rng, n, 5);
    let params = init_layer(&cfg, "l.", &mut rng);
    (cfg, batch, pos, hid, wp, wh, params)
}

fn layer_loss(arch: Arch) -> impl Fn(&Tape, &ModelParams) -> ggik::tensor::Result<Var> {
    let (cfg, batch, pos, hid, wp, wh, _) = layer_setup(arch);
    move |t: &Tape, p: &ModelParams| {
        let s = GraphState { positions: t.constant(pos.clone()), hidden: t.constant(hid.clone()) };
        let out = match arch {
            Arch::Egnn => egnn_layer(t, p, "l.", &cfg, &batch, s)?,
            Arch::Baseline => baseline_mpnn_layer(t, p, "l.", &cfg, &batch, s)?,
        };
        let a = t.sum(t.mul(out.positions, t.constant(wp.clone()))?)?;
        let b = t.sum(t.mul(out.hidden, t.constant(wh.clone()))?)?;
        t.add(a, b)
    }
}

#[test]
fn edge_message_block() {
    let params = layer_setup(Arch::Egnn).6;
    let r = check_part(&params, "phi_e", layer_loss(Arch::Egnn));
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn coordinate_block() {
    let params = layer_setup(Arch::Egnn).6;
    let r = check_part(&params, "phi_x", layer_loss(Arch::Egnn));
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn node_update_block() {
    let params = layer_setup(Arch::Egnn).6;
    let r = check_part(&params, "phi_h", layer_loss(Arch::Egnn));
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn baseline_layer() {
    let params = layer_setup(Arch::Baseline).6;
    let r = check_part(&params, "l.", layer_loss(Arch::Baseline));
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

/// Tiny model and a frozen two-problem batch with fixed latent noise.
fn cvae_setup() -> (GgikModel, Batch, Vec<Tensor>) {
    let cfg = CvaeConfig { latent: 2, mixtures: 2, hidden: 4, message: 4, layers: 1, length_scale: 3.0, ..Default::default() };
    let model = GgikModel::new(cfg, 11).unwrap();
    let planar = KinematicChain::planar("p3", &[1.0, 0.8, 0.5]).unwrap();
    let spatial = suite_chain("spatial-4r").unwrap();
    let mut graphs = Vec::new();
    for (c, seed) in [(&planar, 1), (&spatial, 2)] {
        let q = c.random_config(seed);
        let goal: Pose = c.forward_kinematics(&q).unwrap();
        graphs.push((partial_graph(c, &goal).unwrap(), complete_graph(c, &q).unwrap()));
    }
    let items: Vec<_> = graphs.iter().map(|(p, c)| (p, Some(c))).collect();
    let b = Batch::new(&items, model.cfg.length_scale).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = vec![Tensor::from_fn(b.num_nodes(), 2, |_, _| rng.sample(StandardNormal))];
    (model, b, eps)
}

#[test]
fn encoder_heads() {
    let (model, b, _) = cvae_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w1, w2) = (random(&mut rng, b.num_nodes(), 2), random(&mut rng, b.num_nodes(), 2));
    let r = check_part(&model.params, "enc.", |t, p| {
        let m = GgikModel { cfg: model.cfg.clone(), params: p.clone() };
        let (mu, sigma) = m.encode_vars(t, &b).map_err(unwrap_tensor)?;
        t.add(t.sum(t.mul(mu, t.constant(w1.clone()))?)?, t.sum(t.mul(sigma, t.constant(w2.clone()))?)?)
    });
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn prior_heads() {
    let (model, b, _) = cvae_setup();
    let n = b.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w1, w2, w3) = (random(&mut rng, n, 4), random(&mut rng, n, 4), random(&mut rng, n, 2));
    let r = check_part(&model.params, "prior.", |t, p| {
        let m = GgikModel { cfg: model.cfg.clone(), params: p.clone() };
        let (mu, sigma, log_pi) = m.prior_vars(t, &b).map_err(unwrap_tensor)?;
        let a = t.sum(t.mul(mu, t.constant(w1.clone()))?)?;
        let c = t.sum(t.mul(sigma, t.constant(w2.clone()))?)?;
        let d = t.sum(t.mul(log_pi, t.constant(w3.clone()))?)?;
        t.add(t.add(a, c)?, d)
    });
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn decoder_head() {
    let (model, b, eps) = cvae_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random(&mut rng, b.num_nodes(), 3);
    let r = check_part(&model.params, "dec.", |t, p| {
        let m = GgikModel { cfg: model.cfg.clone(), params: p.clone() };
        let x = m.decode_var(t, &b, t.constant(eps[0].clone())).map_err(unwrap_tensor)?;
        t.sum(t.mul(x, t.constant(w.clone()))?)
    });
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn full_bound_with_frozen_noise() {
    let (model, b, eps) = cvae_setup();
    let r = check_gradients(&model.params, H, None, |t, p| {
        let m = GgikModel { cfg: model.cfg.clone(), params: p.clone() };
        Ok(elbo_terms(&m, t, &b, &eps).map_err(unwrap_tensor)?.elbo)
    })
    .unwrap();
    assert!(r.checked == model.num_params(), "checked {} of {}", r.checked, model.num_params());
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

fn unwrap_tensor(e: ggik::cvae::CvaeError) -> ggik::tensor::TensorError {
    match e {
        ggik::cvae::CvaeError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}
