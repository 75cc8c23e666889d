use speechbridge::corpus::{generate_corpus, SynthSpec};
use speechbridge::s2p::*;

fn main() {
    let sigma: f64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let ep: usize = std::env::args().nth(2).unwrap().parse().unwrap();
    let mut s = SynthSpec::with_defaults(17).unwrap();
    s.noise_sigma = sigma;
    let corpus = generate_corpus(&s, 2250).unwrap();
    let (train, dev) = corpus.split_at(2000);
    let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
    let hyper = TrainHyper { epochs: ep, batch_size: 8, lr: 0.03, seed: 17 };
    let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
    let best = out.dev_per.iter().copied().fold(f64::INFINITY, f64::min);
    println!("sigma={sigma} ep={ep}: best={best:.4} last5={:?}", out.dev_per[out.dev_per.len().saturating_sub(5)..].iter().map(|x| (x*1000.0).round()/1000.0).collect::<Vec<_>>());
}
