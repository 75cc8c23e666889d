use speechbridge::corpus::{generate_corpus, SynthSpec};
use speechbridge::s2p::*;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "ctc0" {
        let mut s = SynthSpec::with_defaults(77).unwrap();
        s.noise_sigma = 0.0;
        let corpus = generate_corpus(&s, 240).unwrap();
        let (train, dev) = corpus.split_at(200);
        let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
        for (lr, bs) in [(0.05, 4), (0.1, 4), (0.15, 4), (0.1, 2)] {
            let hyper = TrainHyper { epochs: 20, batch_size: bs, lr, seed: 9 };
            let t = Instant::now();
            let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
            let best = out.dev_per.iter().copied().fold(f64::INFINITY, f64::min);
            let first_zero = out.dev_per.iter().position(|&p| p == 0.0);
            println!("lr={lr} bs={bs}: best={best:.4} first_zero={first_zero:?} ({:.1?})", t.elapsed());
        }
    } else {
        let s = SynthSpec::with_defaults(17).unwrap();
        let corpus = generate_corpus(&s, 700).unwrap();
        let (train, dev) = corpus.split_at(600);
        let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
        for (lr, bs, ep) in [(0.05, 4, 8), (0.1, 4, 8), (0.15, 4, 8)] {
            let hyper = TrainHyper { epochs: ep, batch_size: bs, lr, seed: 17 };
            let t = Instant::now();
            let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
            println!("lr={lr} bs={bs} ep={ep}: curve={:?} ({:.1?})", out.dev_per.iter().map(|x| (x*1000.0).round()/1000.0).collect::<Vec<_>>(), t.elapsed());
        }
    }
}
