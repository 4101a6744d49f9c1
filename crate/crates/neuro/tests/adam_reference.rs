//! Adam trajectory against an independent scalar re-implementation.

use intentkit_neuro::{Adam, ParamSet, Tape};

/// Textbook scalar Adam with decoupled decay, written without reference to the crate.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, theta: f64, g: f64, lr: f64, wd: f64) -> f64 {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mhat = self.m / (1.0 - 0.9f64.powi(self.t));
        let vhat = self.v / (1.0 - 0.999f64.powi(self.t));
        theta - lr * (mhat / (vhat.sqrt() + 1e-8) + wd * theta)
    }
}

#[test]
fn hundred_step_quadratic_trajectory_matches_scalar_reference() {
    // minimize (w - 3)^2 + (b + 1)^2 where w decays and b is exempt
    let mut ps = ParamSet::new();
    let w = ps.constant("w", 1, 1, 0.5);
    ps.get_mut(w).weight_decay_exempt = false;
    let b = ps.constant("b", 1, 1, 0.0);
    let (lr, wd) = (1e-2, 1e-2);
    let mut adam = Adam::new(&ps, lr, wd);
    let (mut rw, mut rb) = (0.5f64, 0.0f64);
    let (mut sw, mut sb) = (ScalarAdam { m: 0.0, v: 0.0, t: 0 }, ScalarAdam { m: 0.0, v: 0.0, t: 0 });
    for _ in 0..100 {
        let mut tape = Tape::<f32>::eval();
        let wv = tape.param(&ps, w);
        let bv = tape.param(&ps, b);
        let a = tape.add_scalar(wv, -3.0);
        let c = tape.add_scalar(bv, 1.0);
        let a2 = tape.square(a);
        let c2 = tape.square(c);
        let l = tape.add(a2, c2);
        let loss = tape.sum_all(l);
        let grads = tape.backward(loss).for_params(&tape, &ps);
        adam.step(&mut ps, &grads);

        let gw = 2.0 * (rw as f32 as f64 - 3.0);
        let gb = 2.0 * (rb as f32 as f64 + 1.0);
        rw = sw.step(rw as f32 as f64, gw, lr, wd) as f32 as f64;
        rb = sb.step(rb as f32 as f64, gb, lr, 0.0) as f32 as f64;
        assert!((ps.get(w).data[0] as f64 - rw).abs() < 1e-6);
        assert!((ps.get(b).data[0] as f64 - rb).abs() < 1e-6);
    }
    assert_eq!(adam.step_count(), 100);
}
