use speechbridge::corpus::{generate_corpus, SynthSpec};
use speechbridge::s2p::*;

fn main() {
    let dmin: usize = std::env::args().nth(1).unwrap().parse().unwrap();
    let lr: f64 = std::env::args().nth(2).unwrap().parse().unwrap();
    let mut s = SynthSpec::with_defaults(77).unwrap();
    s.noise_sigma = 0.0;
    s.duration_min = dmin;
    s.duration_max = dmin + 3;
    let corpus = generate_corpus(&s, 240).unwrap();
    let (train, dev) = corpus.split_at(200);
    let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
    let hyper = TrainHyper { epochs: 20, batch_size: 4, lr, seed: 9 };
    let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
    let first_zero = out.dev_per.iter().position(|&p| p == 0.0);
    let best = out.dev_per.iter().copied().fold(f64::INFINITY, f64::min);
    println!("dmin={dmin} lr={lr}: best={best:.4} first_zero={first_zero:?} curve_tail={:?}", out.dev_per[14..].iter().map(|x| (x*1000.0).round()/1000.0).collect::<Vec<_>>());
}
