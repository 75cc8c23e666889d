use speechbridge::autodiff::{sgd_update, Tensor};
use speechbridge::corpus::{generate_corpus, SynthSpec};
use speechbridge::linalg::Matrix;
use speechbridge::metrics::levenshtein;
use speechbridge::s2p::*;
use speechbridge::ctc::greedy_decode;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    let s = SynthSpec::with_defaults(17).unwrap();
    let corpus = generate_corpus(&s, 1200).unwrap();
    let (train, dev) = corpus.split_at(1000);

    // Frame classifier: encoder + softmax CE head trained on frame labels.
    let cfg = EncoderConfig::default();
    let mut enc = EncoderParams::init(cfg, 1);
    let mut hw = Matrix::randn(cfg.hidden, 20, 0.125, &mut ChaCha8Rng::seed_from_u64(2));
    let mut hb = Matrix::zeros(1, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..8 {
        order.shuffle(&mut rng);
        for batch in order.chunks(8) {
            let et = enc.tensors(true);
            let hwt = Tensor::param(hw.clone());
            let hbt = Tensor::param(hb.clone());
            for &i in batch {
                let u = &train[i];
                let w = EncoderParams::window(&u.features, cfg.context);
                let st = et.forward(&Tensor::constant(w)).unwrap();
                let logits = st.matmul(&hwt).unwrap().add(&hbt).unwrap();
                let logp = logits.log_softmax_rows();
                let mut mask = Matrix::zeros(logp.shape().0, 20);
                for (t, &l) in u.frame_labels.iter().enumerate() { mask.set(t, l, 1.0); }
                let loss = logp.mul(&Tensor::constant(mask)).unwrap().sum().scalar_mul(-1.0 / (8.0 * u.frame_labels.len() as f64));
                loss.backward().unwrap();
            }
            // apply
            for (t, m) in [(&et.w1, &mut enc.w1), (&et.b1, &mut enc.b1), (&et.w2, &mut enc.w2), (&et.b2, &mut enc.b2)] {
                sgd_update(t, m, 2.0);
            }
            sgd_update(&hwt, &mut hw, 2.0);
            sgd_update(&hbt, &mut hb, 2.0);
        }
        // frame accuracy on dev
        let mut correct = 0usize; let mut total = 0usize;
        for u in dev {
            let st = enc.forward(&u.features).unwrap();
            let logits = st.matmul(&hw);
            for (t, &l) in u.frame_labels.iter().enumerate() {
                let row = logits.row(t);
                let mut best = 0; for (i, &v) in row.iter().enumerate() { if v > row[best] { best = i; } }
                correct += usize::from(best == l); total += 1;
            }
        }
        println!("epoch {epoch}: dev frame acc {:.4}", correct as f64 / total as f64);
    }

    // CTC error structure at the plateau.
    let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
    let hyper = TrainHyper { epochs: 8, batch_size: 8, lr: 0.02, seed: 17 };
    let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
    let (mut hlen, mut rlen, mut dist) = (0usize, 0usize, 0usize);
    for u in dev {
        let post = out.model.posteriors(&u.features).unwrap();
        let hyp = greedy_decode(&post);
        let refids = mode.target_ids(u).unwrap();
        hlen += hyp.len(); rlen += refids.len(); dist += levenshtein(&hyp, &refids);
    }
    println!("ctc: per={:.4} hyp_len/ref_len={:.3}", dist as f64 / rlen as f64, hlen as f64 / rlen as f64);
}
