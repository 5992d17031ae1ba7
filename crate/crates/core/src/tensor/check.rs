use super::{Graph, Tensor, Var};

/// Largest relative error between reverse-mode gradients and central
/// differences `(f(x+ε) − f(x−ε)) / 2ε` over every coordinate of `params`.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars);
    g.backward(loss).expect("grad_check needs a scalar function");
    let analytic: Vec<Vec<f64>> = vars.iter().zip(params).map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec)).collect();

    let eval = |ps: &[Tensor]| {
        let mut g = Graph::inference();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };

    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for (ci, &a) in grads.iter().enumerate() {
            let orig = work[pi].data[ci];
            work[pi].data[ci] = orig + eps;
            let plus = eval(&work);
            work[pi].data[ci] = orig - eps;
            let minus = eval(&work);
            work[pi].data[ci] = orig;
            let n = (plus - minus) / (2.0 * eps);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}
