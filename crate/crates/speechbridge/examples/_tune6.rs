use speechbridge::corpus::{generate_corpus, SynthSpec};
use speechbridge::s2p::*;

fn main() {
    let n: usize = std::env::args().nth(1).unwrap().parse().unwrap();
    let bs: usize = std::env::args().nth(2).unwrap().parse().unwrap();
    let lr: f64 = std::env::args().nth(3).unwrap().parse().unwrap();
    let mut s = SynthSpec::with_defaults(77).unwrap();
    s.noise_sigma = 0.0;
    let corpus = generate_corpus(&s, n + 40).unwrap();
    let (train, dev) = corpus.split_at(n);
    let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
    let hyper = TrainHyper { epochs: 20, batch_size: bs, lr, seed: 9 };
    let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
    let first_zero = out.dev_per.iter().position(|&p| p == 0.0);
    let best = out.dev_per.iter().copied().fold(f64::INFINITY, f64::min);
    println!("n={n} bs={bs} lr={lr}: best={best:.4} first_zero={first_zero:?}");
}
