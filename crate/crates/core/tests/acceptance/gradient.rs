use topicsum::corpus::EncodedExample;
use topicsum::model::{Dropout, Hyperparams, Mode, Model};
use topicsum::nn::Gradients;

use crate::Outcome;

pub fn run() -> Outcome {
    let hp = Hyperparams {
        emb_dim: 8,
        hidden_dim: 8,
        enc_layers: 2,
        dec_layers: 2,
        kernel_width: 3,
        dropout: 0.0,
        max_source_positions: 16,
        max_token_positions: 16,
        max_sentence_positions: 4,
        vocab_size: 20,
        topic_count: 5,
        mode: Mode::StructuredTopic,
    };
    let ex = EncodedExample {
        title: vec!["x".into()],
        source: vec![7, 8, 9, 5, 10, 11, 12, 5, 13, 14, 15, 16],
        sentences: vec![vec![8, 9, 17, 18], vec![10, 19, 12, 11]],
        topic_labels: Some(vec![0, 2, 4]),
    };
    let mut model = Model::new(hp, 11).unwrap();
    let mut grads = Gradients::new(model.params());
    model.loss_and_grad(&ex, &mut Dropout::off(), &mut grads).unwrap();
    let h = 1e-5;
    let (mut checked, mut ok, mut worst, mut miss_mag) = (0usize, 0usize, 0.0f64, 0.0f64);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let analytic = grads.get(id);
        for idx in ndarray::indices(analytic.raw_dim()) {
            let orig = model.params().get(id)[idx];
            model.params_mut().get_mut(id)[idx] = orig + h;
            let up = model.forward_loss(&ex).unwrap().total();
            model.params_mut().get_mut(id)[idx] = orig - h;
            let down = model.forward_loss(&ex).unwrap().total();
            model.params_mut().get_mut(id)[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let scale = a.abs().max(numeric.abs());
            // both sides below 1e-9 count as agreement
            let rel = if scale < 1e-9 { 0.0 } else { (a - numeric).abs() / scale };
            worst = worst.max(rel);
            checked += 1;
            if rel < 1e-4 {
                ok += 1;
            } else {
                miss_mag = miss_mag.max(scale);
            }
        }
    }
    let frac = ok as f64 / checked as f64;
    Outcome::new(
        frac >= 0.99,
        format!(
            "{ok}/{checked} parameters within 1e-4 relative error ({:.2}%), worst {worst:.2e}, largest |grad| among misses {miss_mag:.1e}",
            100.0 * frac
        ),
    )
}
