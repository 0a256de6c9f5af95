use ecgpain::models::{
    gradcheck_suite, mtl_loss, mtl_loss_grad, Batch, GradCheckOptions, LossForm, MtlLossParams,
    NetworkConfig, PainNet, TaskSet, TrainConfig, Trainer,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn full_size_gradcheck_suite_passes() {
    let reports = gradcheck_suite(&GradCheckOptions::default()).unwrap();
    assert_eq!(reports.len(), 4);
    for r in &reports {
        println!(
            "{}: max rel error {:.3e} over {} params ({} kink draws skipped)",
            r.label,
            r.max_rel_error,
            r.entries.len(),
            r.skipped_kinks
        );
        assert!(r.passed(), "{}: {:?}", r.label, r.worst());
        assert!(r.entries.len() >= 100);
    }
    let mt = &reports[2];
    let ws: Vec<usize> = mt
        .entries
        .iter()
        .filter(|e| e.tensor == "task_weights")
        .map(|e| e.index)
        .collect();
    assert_eq!(ws, vec![0, 1, 2]);
}

#[test]
fn mt_with_zero_aux_coefficients_tracks_st_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 40;
    let x = Array2::from_shape_simple_fn((n, 6), || rng.random_range(-2.0..2.0));
    let pain: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let age: Vec<usize> = (0..n).map(|i| i % 36).collect();
    let gender: Vec<usize> = (0..n).map(|i| (i / 3) % 2).collect();

    let st_cfg = NetworkConfig::st_nn(6, 2);
    let mut mt_cfg = NetworkConfig::mt_nn(6, 2, TaskSet { age: true, gender: true });
    mt_cfg.loss.coefficients = [1.0, 0.0, 0.0];
    let train = TrainConfig {
        epochs: 20,
        warmup_epochs: 0,
        batch_size: 4,
        ..Default::default()
    };
    let mut st = Trainer::new(PainNet::new(st_cfg, 99).unwrap(), train.clone(), 3).unwrap();
    let mut mt = Trainer::new(PainNet::new(mt_cfg, 99).unwrap(), train, 3).unwrap();
    let st_data = Batch::new(x.view(), &pain);
    let mt_data = Batch {
        inputs: x.view(),
        pain: &pain,
        age: Some(&age),
        gender: Some(&gender),
    };
    st.run_epoch(&st_data).unwrap();
    mt.run_epoch(&mt_data).unwrap();
    assert_eq!(st.optimizer_step(), 10);

    let (s, m) = (st.network(), mt.network());
    assert_eq!(s.encoder, m.encoder);
    assert_eq!(s.heads[0], m.heads[0]);
    assert_eq!(s.task_weights, m.task_weights);
    let (ps, pm) = (s.pain_logits(x.view()).unwrap(), m.pain_logits(x.view()).unwrap());
    assert!(ps.iter().zip(&pm).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn kendall_weights_descend_toward_log_loss() {
    let losses = [0.4, 2.0, 7.5];
    let mut params = MtlLossParams {
        w: [0.0; 3],
        c: [1.0, 0.2, 0.2],
    };
    for _ in 0..20_000 {
        let (_, d_w) = mtl_loss_grad(losses, &params, LossForm::KendallCorrected);
        for t in 0..3 {
            params.w[t] -= 0.05 * d_w[t];
        }
    }
    for t in 0..3 {
        assert!((params.w[t] - losses[t].ln()).abs() < 1e-6, "{:?}", params.w);
    }
}

#[test]
fn paper_literal_weights_drift_downward() {
    let mut params = MtlLossParams {
        w: [0.0; 3],
        c: [1.0; 3],
    };
    let mut prev = mtl_loss([1.0; 3], &params, LossForm::PaperLiteral).unwrap().total;
    for _ in 0..200 {
        let (_, d_w) = mtl_loss_grad([1.0; 3], &params, LossForm::PaperLiteral);
        assert!(d_w.iter().all(|d| *d > 0.0));
        for t in 0..3 {
            params.w[t] -= 0.1 * d_w[t];
        }
        let now = mtl_loss([1.0; 3], &params, LossForm::PaperLiteral).unwrap().total;
        assert!(now < prev);
        prev = now;
    }
    assert!(params.w.iter().all(|w| *w < -5.0));
}
