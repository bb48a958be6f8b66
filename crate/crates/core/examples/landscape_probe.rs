//! Scratch probe: mode structure from chi-sampled tilted states.
use diffmpc_core::dynamics::{SystemKind, SystemModel};
use diffmpc_core::ocp::{ControlSequence, InputBox, OcpSpec};
use diffmpc_core::solver::{solve_multistart, SolverConfig};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn main() {
    let h = 64;
    let umax = 28.0;
    let spec = OcpSpec::new(
        h, SystemKind::CartPole,
        vec![0.01, 0.01, 1000.0, 0.01], vec![0.001], vec![0.01, 0.1, 1000.0, 0.1],
        InputBox::symmetric(umax, 1).unwrap(),
    ).unwrap();
    let mut model = SystemModel::cart_pole();
    model.link_lengths = [0.15, 0.15];
    let cfg = SolverConfig { memory: 30, max_iterations: 800, ..SolverConfig::default() };
    let tau = 0.25 * 2.0 * umax * (h as f64).sqrt();
    println!("tau={tau}");
    for theta0 in [1.8, 2.2, 2.6, 3.0, 3.14, 3.6, 4.0, 4.4] {
        let x0 = [0.0, 0.0, theta0, 0.0];
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let guesses: Vec<ControlSequence<f64>> = (0..20).map(|_| {
            let mut g = ControlSequence::zeros(h, 1);
            for i in 0..h { g.step_mut(i)[0] = rng.random_range(-umax..umax); }
            g
        }).collect();
        let multi = solve_multistart(&spec, &model, &x0, &guesses, &cfg).unwrap();
        let seqs: Vec<_> = multi.results.iter().map(|r| r.as_ref().unwrap()).collect();
        let nconv = seqs.iter().filter(|r| r.converged).count();
        let mut clusters: Vec<Vec<usize>> = vec![];
        'o: for (i, r) in seqs.iter().enumerate() {
            for c in clusters.iter_mut() {
                if r.sequence.l2_distance(&seqs[c[0]].sequence) <= tau { c.push(i); continue 'o; }
            }
            clusters.push(vec![i]);
        }
        print!("theta0={theta0:4.2} conv={nconv:2} cl={}:", clusters.len());
        let mut sc: Vec<_> = clusters.iter().map(|c| {
            let min = c.iter().map(|&i| seqs[i].cost).fold(f64::INFINITY, f64::min);
            let st = model.rollout_states(&x0, &seqs[c[0]].sequence).unwrap();
            (c.len(), min, st[h][2])
        }).collect();
        sc.sort_by(|a, b| b.0.cmp(&a.0));
        for (n, j, te) in sc.iter().take(4) { print!(" [n={n:2} J={j:7.0} thH={te:5.2}]"); }
        println!();
    }
}
