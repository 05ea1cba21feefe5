use zprune_core::activation::ScalingParams;
use zprune_core::corpus::{synth_corpus, windows};
use zprune_core::eval::{perplexity, sparsity_sweep, SweepSpec};
use zprune_core::model::{layer_id, LinearKind, ToyModel, ToyModelConfig};
use zprune_core::pruning::{prune_model, prune_model_planned, Method, NoClock, PruneMode, PruneRequest};
use zprune_core::matrix_sparsity;

fn cfg() -> ToyModelConfig {
    ToyModelConfig {
        vocab_size: 64,
        d_model: 16,
        n_blocks: 3,
        n_heads: 2,
        d_ff: 32,
        context_len: 16,
        seed: 11,
    }
}

fn calib() -> Vec<Vec<u32>> {
    let stream: Vec<u32> = synth_corpus(5, 1_000).unwrap().into_iter().map(|t| t % 64).collect();
    windows(&stream, 16, 16)
}

fn req(method: Method, rho: f64) -> PruneRequest {
    PruneRequest::new(method, rho, PruneMode::PerNeuron, ScalingParams::llama())
}

#[test]
fn rho_zero_is_a_bitwise_no_op() {
    let model = ToyModel::init(cfg()).unwrap();
    let calib = calib();
    for method in Method::ALL {
        let out = prune_model(&model, &calib, &req(method, 0.0), &NoClock).unwrap();
        assert!(out.model == model);
        for seq in &calib {
            assert!(out.model.forward(seq).unwrap().bitwise_eq(&model.forward(seq).unwrap()));
        }
    }
    let eval: Vec<u32> = calib.concat();
    let spec = SweepSpec {
        model_tag: "t".into(),
        methods: Method::ALL.to_vec(),
        rhos: vec![0.0],
        base: req(Method::ZPruner, 0.5),
    };
    let table = sparsity_sweep(&model, &spec, &calib, &eval, &NoClock).unwrap();
    let dense = table.dense().unwrap().ppl;
    assert_eq!(dense, perplexity(&model, &eval).unwrap().ppl);
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.ppl == dense));
}

#[test]
fn every_linear_reaches_target_sparsity() {
    let model = ToyModel::init(cfg()).unwrap();
    let out = prune_model(&model, &calib(), &req(Method::ZPruner, 0.5), &NoClock).unwrap();
    assert_eq!(out.reports.len(), 18);
    assert_eq!(out.stats.len(), 18);
    for (b, block) in out.model.blocks.iter().enumerate() {
        for kind in LinearKind::ALL {
            assert!(matrix_sparsity(block.linear(kind)) >= 0.5, "{}", layer_id(b, kind));
        }
    }
    assert!(out.model.embed == model.embed && out.model.head == model.head && out.model.pos == model.pos);
}

#[test]
fn changing_block_masks_changes_next_block_statistics() {
    let model = ToyModel::init(cfg()).unwrap();
    let calib = calib();
    let base = prune_model(&model, &calib, &req(Method::ZPruner, 0.5), &NoClock).unwrap();
    for k in 0..cfg().n_blocks - 1 {
        let alt = prune_model_planned(
            &model,
            &calib,
            |b| if b == k { req(Method::Magnitude, 0.5) } else { req(Method::ZPruner, 0.5) },
            &NoClock,
        )
        .unwrap();
        let per_block = LinearKind::ALL.len();
        // blocks up to k see identical inputs
        assert_eq!(base.stats[..(k + 1) * per_block], alt.stats[..(k + 1) * per_block]);
        let next = (k + 1) * per_block..(k + 2) * per_block;
        assert_ne!(base.stats[next.clone()], alt.stats[next]);
    }
}

#[test]
fn reconstruction_and_bad_requests_are_rejected() {
    let model = ToyModel::init(cfg()).unwrap();
    let mut r = req(Method::ZPruner, 0.5);
    r.reconstruction = true;
    assert_eq!(prune_model(&model, &calib(), &r, &NoClock).unwrap_err().kind(), "NotImplemented");
    assert!(prune_model(&model, &[], &req(Method::Wanda, 0.5), &NoClock).is_err());
    assert!(prune_model(&model, &calib(), &req(Method::Wanda, 1.5), &NoClock).is_err());
}

#[test]
fn pruning_is_deterministic() {
    let model = ToyModel::init(cfg()).unwrap();
    let a = prune_model(&model, &calib(), &req(Method::ZPruner, 0.3), &NoClock).unwrap();
    let b = prune_model(&model, &calib(), &req(Method::ZPruner, 0.3), &NoClock).unwrap();
    assert!(a.model == b.model);
    assert_eq!(a.reports, b.reports);
}
