use rand::Rng;
use zat_core::numerics::{
    analytic_gradients, check_against_finite_differences, grad_check, xavier_uniform, Binding, GradCheckOptions,
    ParamId, ParamSet, SeededRng, Tape, Tensor, Var,
};
use zat_core::{Error, Result};

fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn check<F>(params: &ParamSet<f64>, f: F) -> f64
where
    F: Fn(&mut Tape<'_, f64>, &Binding) -> Result<Var>,
{
    let opts = GradCheckOptions { samples_per_tensor: 1000, ..Default::default() };
    grad_check(f, params, &opts).unwrap().max_rel_error
}

#[test]
fn sum_gradient_is_ones() {
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(Tensor::vector(vec![0.3, -1.0, 2.0]));
    let loss = tape.sum(p);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(p).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn dot_gradient_is_twice_p() {
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(Tensor::vector(vec![2.0, 3.0]));
    let sq = tape.mul(p, p).unwrap();
    let loss = tape.sum(sq);
    assert_eq!(tape.value(loss).data(), &[13.0]);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(p).data(), &[4.0, 6.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.tanh(p);
    assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
}

#[test]
fn nan_reports_node() {
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(Tensor::vector(vec![f64::INFINITY, 1.0]));
    let q = tape.leaf(Tensor::vector(vec![f64::INFINITY, 1.0]));
    let d = tape.sub(p, q).unwrap();
    let loss = tape.sum(d);
    match tape.backward(loss) {
        Err(Error::NonFinite { node, op }) => {
            assert_eq!(node, d.index());
            assert_eq!(op, "sub");
        }
        other => panic!("expected NonFinite, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn independent_parameter_gets_exact_zero() {
    let mut params = ParamSet::new();
    let a = params.add("a", Tensor::vector(vec![1.0, 2.0]));
    let b = params.add("b", Tensor::vector(vec![5.0]));
    let mut tape = Tape::new();
    let bind = tape.bind(&params);
    let t = tape.tanh(bind.var(a));
    let loss = tape.sum(t);
    let grads = tape.backward(loss).unwrap().params(&bind);
    assert_eq!(grads[b.0].data(), &[0.0]);
    assert!(grads[a.0].data().iter().all(|&g| g != 0.0));
}

#[test]
fn random_five_node_graph_matches_finite_differences() {
    for seed in 0..5 {
        let mut rng = SeededRng::new(seed);
        let mut params = ParamSet::new();
        let w = params.add("w", random(&[3, 4], &mut rng));
        let x = params.add("x", random(&[4, 2], &mut rng));
        let b = params.add("b", random(&[3], &mut rng));
        // matmul -> bias -> tanh -> mul with itself -> sum
        let err = check(&params, |tape, bind| {
            let h = tape.matmul(bind.var(w), bind.var(x))?;
            let h = tape.add_col_broadcast(h, bind.var(b))?;
            let h = tape.tanh(h);
            let h = tape.mul(h, h)?;
            Ok(tape.sum(h))
        });
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

/// Each primitive composed with a fixed random projection so every output
/// coordinate influences the loss with a distinct weight.
fn primitive_case(name: &str, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let mut params = ParamSet::new();
    let a = params.add("a", random(&[3, 4], &mut rng));
    let b = params.add("b", random(&[3, 4], &mut rng));
    let c = params.add("c", random(&[4, 5], &mut rng));
    let v3 = params.add("v3", random(&[3], &mut rng));
    let v4 = params.add("v4", random(&[4], &mut rng));
    let proj_seed = rng.gen::<u64>();
    let weigh = move |tape: &mut Tape<'_, f64>, y: Var| -> Result<Var> {
        let shape = tape.shape(y).to_vec();
        let w = tape.constant(random(&shape, &mut SeededRng::new(proj_seed)));
        let p = tape.mul(y, w)?;
        Ok(tape.sum(p))
    };
    let name = name.to_string();
    check(&params, move |tape, bind| {
        let (a, b, c) = (bind.var(a), bind.var(b), bind.var(c));
        let (v3, v4) = (bind.var(v3), bind.var(v4));
        let y = match name.as_str() {
            "matmul" => tape.matmul(a, c)?,
            "matmul_nt" => tape.matmul_nt(a, b)?,
            "matmul_tn" => tape.matmul_tn(a, b)?,
            "add" => tape.add(a, b)?,
            "sub" => tape.sub(a, b)?,
            "mul" => tape.mul(a, b)?,
            "scale" => tape.scale(a, -1.7),
            "add_col" => tape.add_col_broadcast(a, v3)?,
            "add_row" => tape.add_row_broadcast(a, v4)?,
            "mul_col" => tape.mul_col_broadcast(a, v3)?,
            "tanh" => tape.tanh(a),
            "sigmoid" => tape.sigmoid(a),
            "concat_rows" => tape.concat_rows(&[a, b])?,
            "concat_cols" => tape.concat_cols(&[a, b, a])?,
            "slice_rows" => tape.slice_rows(a, 1, 2)?,
            "slice_cols" => tape.slice_cols(a, 1, 2)?,
            "reshape" => tape.reshape(a, &[2, 6])?,
            "transpose" => tape.transpose(a),
            "softmax" => tape.softmax_rows(a),
            "lse" => return Ok(tape.log_sum_exp(a)),
            "max_pool" => tape.max_pool_cols(a)?,
            "segment_max" => tape.segment_max_cols(c, &[2, 3])?,
            "gather" => tape.gather(a, &[2, 0, 2, 1])?,
            "windows" => tape.windows(a, 2, &[0, 2, 1])?,
            "xent" => return tape.softmax_cross_entropy(a, &[0, 2, 1, 1]),
            other => panic!("unknown case {other}"),
        };
        weigh(tape, y)
    })
}

#[test]
fn every_primitive_matches_finite_differences() {
    let cases = [
        "matmul", "matmul_nt", "matmul_tn", "add", "sub", "mul", "scale", "add_col", "add_row", "mul_col", "tanh",
        "sigmoid", "concat_rows", "concat_cols", "slice_rows", "slice_cols", "reshape", "transpose", "softmax", "lse",
        "max_pool", "segment_max", "gather", "windows", "xent",
    ];
    for case in cases {
        for seed in 0..3 {
            let err = primitive_case(case, seed);
            assert!(err < 1e-5, "{case} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn max_pool_ties_route_to_first_index() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::matrix(1, 3, vec![2.0, 2.0, 1.0]).unwrap());
    let m = tape.max_pool_cols(x).unwrap();
    let loss = tape.sum(m);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn linear_model_grad_check_is_tight() {
    let mut rng = SeededRng::new(4);
    let mut params = ParamSet::new();
    let w = params.add("w", xavier_uniform(&[1, 6], &mut rng).unwrap());
    let x = random(&[6, 3], &mut rng);
    let err = check(&params, |tape, bind| {
        let xv = tape.constant(x.clone());
        let y = tape.matmul(bind.var(w), xv)?;
        Ok(tape.sum(y))
    });
    assert!(err < 1e-8, "{err}");
}

#[test]
fn corrupted_gradient_is_detected() {
    let mut rng = SeededRng::new(8);
    let mut params = ParamSet::new();
    let w = params.add("w", random(&[3, 3], &mut rng));
    let loss_fn = |tape: &mut Tape<'_, f64>, bind: &Binding| -> Result<Var> {
        let s = tape.matmul(bind.var(w), bind.var(w))?;
        let s = tape.tanh(s);
        Ok(tape.sum(s))
    };
    let mut analytic = analytic_gradients(&loss_fn, &params).unwrap();
    let opts = GradCheckOptions::default();
    let clean = check_against_finite_differences(&loss_fn, &params, &analytic, &opts).unwrap();
    assert!(clean.max_rel_error < 1e-6);
    analytic[0].data_mut()[4] *= 1.5;
    let report = check_against_finite_differences(&loss_fn, &params, &analytic, &opts).unwrap();
    assert!(report.max_rel_error > 1e-2);
    assert_eq!(report.worst, Some(("w".to_string(), 4)));
}

#[test]
fn non_finite_loss_is_error() {
    let mut params = ParamSet::new();
    let w = params.add("w", Tensor::vector(vec![1.0]));
    let res = grad_check(
        |tape: &mut Tape<'_, f64>, bind: &Binding| {
            let inf = tape.constant(Tensor::vector(vec![f64::INFINITY]));
            let y = tape.mul(bind.var(w), inf)?;
            Ok(tape.sum(y))
        },
        &params,
        &GradCheckOptions::default(),
    );
    assert!(res.is_err());
    let _ = ParamId(0);
}
