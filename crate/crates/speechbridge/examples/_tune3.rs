use speechbridge::corpus::{generate_corpus, SynthSpec};
use speechbridge::s2p::*;
use std::time::Instant;

fn main() {
    let s = SynthSpec::with_defaults(17).unwrap();
    let corpus = generate_corpus(&s, 2250).unwrap();
    let (train, dev) = corpus.split_at(2000);
    let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
    let lr: f64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let bs: usize = std::env::args().nth(2).unwrap().parse().unwrap();
    let ep: usize = std::env::args().nth(3).unwrap().parse().unwrap();
    let hyper = TrainHyper { epochs: ep, batch_size: bs, lr, seed: 17 };
    let t = Instant::now();
    let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
    println!("lr={lr} bs={bs} ep={ep}: curve={:?} ({:.1?})", out.dev_per.iter().map(|x| (x*10000.0).round()/10000.0).collect::<Vec<_>>(), t.elapsed());
}
