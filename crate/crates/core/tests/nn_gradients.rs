use conceptlab::nn::gradcheck::{check_inputs, check_params, DEFAULT_STEP};
use conceptlab::nn::{Activation, DenseLayer, Graph, Mlp, ParamStore, Tensor};
use conceptlab::{rng_from_seed, Error};
use rand::Rng;

const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Reduces any node to a scalar through a fixed random weighting so that
/// every output entry carries a distinct cotangent.
fn weighted_sum(g: &mut Graph, x: conceptlab::nn::NodeId, seed: u64) -> conceptlab::nn::NodeId {
    let [r, c] = g.shape(x);
    let w = g.constant(random(r, c, -1.0, 1.0, seed));
    let p = g.mul(x, w);
    g.sum(p)
}

fn assert_unary(
    name: &str,
    lo: f64,
    hi: f64,
    op: fn(&mut Graph, conceptlab::nn::NodeId) -> conceptlab::nn::NodeId,
) {
    let x = random(3, 4, lo, hi, 11);
    let report = check_inputs(&[x], DEFAULT_STEP, |g, ids| {
        let y = op(g, ids[0]);
        weighted_sum(g, y, 5)
    });
    assert!(report.passes(TOL), "{name}: {report:?}");
}

#[test]
fn elementwise_ops_match_finite_differences() {
    assert_unary("tanh", -2.0, 2.0, |g, x| g.tanh(x));
    assert_unary("sigmoid", -3.0, 3.0, |g, x| g.sigmoid(x));
    assert_unary("relu", 0.1, 2.0, |g, x| g.relu(x));
    assert_unary("relu-neg", -2.0, -0.1, |g, x| g.relu(x));
    assert_unary("softplus", -4.0, 4.0, |g, x| g.softplus(x));
    assert_unary("exp", -2.0, 1.0, |g, x| g.exp(x));
    assert_unary("log", 0.5, 3.0, |g, x| g.log(x));
    assert_unary("square", -2.0, 2.0, |g, x| g.square(x));
    assert_unary("sin", -3.0, 3.0, |g, x| g.sin(x));
    assert_unary("cos", -3.0, 3.0, |g, x| g.cos(x));
    assert_unary("signed_sqrt+", 0.2, 4.0, |g, x| g.signed_sqrt(x));
    assert_unary("signed_sqrt-", -4.0, -0.2, |g, x| g.signed_sqrt(x));
    assert_unary("abs", 0.2, 2.0, |g, x| g.abs(x));
    assert_unary("scale", -1.0, 1.0, |g, x| g.scale(x, -2.5));
    assert_unary("add_scalar", -1.0, 1.0, |g, x| g.add_scalar(x, 0.7));
    assert_unary("transpose", -1.0, 1.0, |g, x| g.transpose(x));
    assert_unary("slice", -1.0, 1.0, |g, x| g.slice_cols(x, 1, 3));
    assert_unary("sum_cols", -1.0, 1.0, |g, x| g.sum_cols(x));
    assert_unary("mean", -1.0, 1.0, |g, x| g.mean(x));
    assert_unary("gather", -1.0, 1.0, |g, x| {
        g.gather_rows(x, &[2, 0, 2, 1, 2])
    });
}

#[test]
fn binary_ops_match_finite_differences() {
    let a = random(3, 4, -1.0, 1.0, 1);
    let b = random(3, 4, -1.0, 1.0, 2);
    let c = random(4, 2, -1.0, 1.0, 3);
    let d = random(5, 4, -1.0, 1.0, 4);
    let row = random(1, 4, 0.5, 1.5, 6);
    let cases: Vec<(
        &str,
        Vec<Tensor>,
        Box<dyn Fn(&mut Graph, &[conceptlab::nn::NodeId]) -> conceptlab::nn::NodeId>,
    )> = vec![
        (
            "add",
            vec![a.clone(), b.clone()],
            Box::new(|g, x| g.add(x[0], x[1])),
        ),
        (
            "sub",
            vec![a.clone(), b.clone()],
            Box::new(|g, x| g.sub(x[0], x[1])),
        ),
        (
            "mul",
            vec![a.clone(), b.clone()],
            Box::new(|g, x| g.mul(x[0], x[1])),
        ),
        (
            "matmul",
            vec![a.clone(), c.clone()],
            Box::new(|g, x| g.matmul(x[0], x[1])),
        ),
        (
            "matmul_t",
            vec![a.clone(), d.clone()],
            Box::new(|g, x| g.matmul_t(x[0], x[1])),
        ),
        (
            "add_row",
            vec![a.clone(), row.clone()],
            Box::new(|g, x| g.add_row(x[0], x[1])),
        ),
        (
            "mul_row",
            vec![a.clone(), row.clone()],
            Box::new(|g, x| g.mul_row(x[0], x[1])),
        ),
        (
            "concat",
            vec![a.clone(), b.clone()],
            Box::new(|g, x| g.concat_cols(&[x[0], x[1], x[0]])),
        ),
    ];
    for (name, inputs, op) in cases {
        let report = check_inputs(&inputs, DEFAULT_STEP, |g, ids| {
            let y = op(g, ids);
            weighted_sum(g, y, 9)
        });
        assert!(report.passes(TOL), "{name}: {report:?}");
    }
}

#[test]
fn sum_of_inputs_has_unit_gradient() {
    let mut g = Graph::new();
    let x = g.input(random(2, 3, -1.0, 1.0, 1));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &Tensor::ones(2, 3));
}

#[test]
fn stop_gradient_blocks_flow_but_keeps_values() {
    let mut g = Graph::new();
    let x = g.input(random(2, 3, -1.0, 1.0, 1));
    let sq = g.square(x);
    let stopped = g.stop_gradient(sq);
    assert_eq!(g.value(stopped), g.value(sq));
    let both = g.add(stopped, x);
    let s = g.sum(both);
    let grads = g.backward(s).unwrap();
    // only the direct edge contributes
    assert_eq!(grads.wrt(x).unwrap(), &Tensor::ones(2, 3));

    let mut g = Graph::new();
    let x = g.input(random(2, 3, -1.0, 1.0, 1));
    let sq = g.square(x);
    let stopped = g.stop_gradient(sq);
    let s = g.sum(stopped);
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).is_none());
}

#[test]
fn backward_requires_an_evaluated_scalar() {
    let mut g = Graph::new();
    let x = g.input(Tensor::ones(2, 2));
    let y = g.square(x);
    assert!(matches!(g.backward(y), Err(Error::Shape { .. })));
    let s = g.sum(y);
    g.clear();
    assert!(matches!(g.backward(s), Err(Error::GraphState(_))));
}

#[test]
fn identity_and_unit_dense_layer_are_transparent() {
    let x = random(4, 3, -1.0, 1.0, 2);
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    assert_eq!(g.value(xi), &x);

    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(0);
    let layer = DenseLayer::new(&mut store, "id", 3, 3, Activation::Identity, &mut rng);
    *store.get_mut(layer.w) = Tensor::identity(3);
    let y = layer.forward(&mut g, &store, xi);
    assert_eq!(g.value(y), &x);
    assert_eq!(layer.eval(&store, &x), x);
}

#[test]
fn two_layer_network_matches_hand_composition() {
    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(42);
    let net = Mlp::new(
        &mut store,
        "net",
        &[3, 4, 2],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    let x = random(5, 3, -1.0, 1.0, 8);
    let w0 = store.get(net.layers[0].w);
    let b0 = store.get(net.layers[0].b);
    let w1 = store.get(net.layers[1].w);
    let b1 = store.get(net.layers[1].b);
    let mut expected = Tensor::zeros(5, 2);
    for r in 0..5 {
        let h: Vec<f64> = (0..4)
            .map(|j| {
                ((0..3).map(|k| w0.get(j, k) * x.get(r, k)).sum::<f64>() + b0.get(0, j)).tanh()
            })
            .collect();
        for o in 0..2 {
            expected.set(
                r,
                o,
                (0..4).map(|j| w1.get(o, j) * h[j]).sum::<f64>() + b1.get(0, o),
            );
        }
    }
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let y = net.forward(&mut g, &store, xi).unwrap();
    for (a, b) in g.value(y).data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let fast = net.eval(&store, &x).unwrap();
    assert_eq!(&fast, g.value(y));
}

#[test]
fn network_parameter_gradients_match_finite_differences() {
    for (seed, act) in [
        (1, Activation::Tanh),
        (2, Activation::Sigmoid),
        (3, Activation::Softplus),
        (4, Activation::Relu),
    ] {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let net = Mlp::new(
            &mut store,
            "net",
            &[3, 5, 2],
            act,
            Activation::Identity,
            &mut rng,
        );
        // nonzero biases so relu kinks are unlikely to sit on a sample
        for l in &net.layers {
            *store.get_mut(l.b) = random(1, l.out_dim, -0.3, 0.3, seed + 10);
        }
        let x = random(4, 3, -1.0, 1.0, seed + 20);
        let target = random(4, 2, -1.0, 1.0, seed + 30);
        let report = check_params(&store, DEFAULT_STEP, |g, s| {
            let xi = g.constant(x.clone());
            let y = net.forward(g, s, xi).unwrap();
            let t = g.constant(target.clone());
            conceptlab::nn::mse(g, y, t)
        });
        assert!(report.passes(TOL), "{act:?}: {report:?}");
    }
}

#[test]
fn input_shape_mismatch_is_reported() {
    let mut store = ParamStore::new();
    let net = Mlp::new(
        &mut store,
        "net",
        &[3, 2],
        Activation::Tanh,
        Activation::Identity,
        &mut rng_from_seed(0),
    );
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(2, 4));
    assert!(matches!(
        net.forward(&mut g, &store, x),
        Err(Error::Shape { .. })
    ));
    assert!(net.eval(&store, &Tensor::zeros(1, 5)).is_err());
}

#[test]
fn jvp_of_linear_map_is_the_map() {
    let mut store = ParamStore::new();
    let net = Mlp::new(
        &mut store,
        "lin",
        &[3, 2],
        Activation::Identity,
        Activation::Identity,
        &mut rng_from_seed(5),
    );
    let a = store.get(net.layers[0].w).clone();
    let x = random(1, 3, -1.0, 1.0, 1);
    let v = random(1, 3, -1.0, 1.0, 2);
    let mut g = Graph::new();
    let (xi, vi) = (g.input(x), g.input(v.clone()));
    let (_, jv) = net.jvp(&mut g, &store, xi, vi).unwrap();
    let expected = v.matmul_t(&a);
    for (p, q) in g.value(jv).data().iter().zip(expected.data()) {
        assert!((p - q).abs() < 1e-14);
    }
}

#[test]
fn jvp_of_identity_network_is_tangent() {
    let mut store = ParamStore::new();
    let net = Mlp::new(
        &mut store,
        "id",
        &[3, 3],
        Activation::Identity,
        Activation::Identity,
        &mut rng_from_seed(5),
    );
    *store.get_mut(net.layers[0].w) = Tensor::identity(3);
    let v = random(2, 3, -1.0, 1.0, 2);
    let mut g = Graph::new();
    let (xi, vi) = (g.input(random(2, 3, -1.0, 1.0, 1)), g.input(v.clone()));
    let (_, jv) = net.jvp(&mut g, &store, xi, vi).unwrap();
    assert_eq!(g.value(jv), &v);
}

#[test]
fn jvp_matches_central_difference_on_tanh_network() {
    let mut store = ParamStore::new();
    let net = Mlp::new(
        &mut store,
        "net",
        &[3, 5, 3],
        Activation::Tanh,
        Activation::Tanh,
        &mut rng_from_seed(17),
    );
    let x = random(1, 3, -1.0, 1.0, 3);
    let v = random(1, 3, -1.0, 1.0, 4);
    let h = 1e-5;
    let shifted = |s: f64| {
        let xs = x.zip_map(&v, |a, b| a + s * b);
        net.eval(&store, &xs).unwrap()
    };
    let (up, down) = (shifted(h), shifted(-h));
    let mut g = Graph::new();
    let (xi, vi) = (g.input(x.clone()), g.input(v.clone()));
    let (_, jv) = net.jvp(&mut g, &store, xi, vi).unwrap();
    for k in 0..3 {
        let fd = (up.data()[k] - down.data()[k]) / (2.0 * h);
        assert!((g.value(jv).data()[k] - fd).abs() < 1e-5, "component {k}");
    }
}

#[test]
fn vector_jacobian_product_matches_jvp_adjoint() {
    // <u, J v> computed through a forward tangent must equal <Jᵀ u, v>.
    let mut store = ParamStore::new();
    let net = Mlp::new(
        &mut store,
        "net",
        &[3, 6, 4],
        Activation::Tanh,
        Activation::Identity,
        &mut rng_from_seed(3),
    );
    let x = random(1, 3, -1.0, 1.0, 1);
    let v = random(1, 3, -1.0, 1.0, 2);
    let u = random(1, 4, -1.0, 1.0, 3);
    let mut g = Graph::new();
    let (xi, vi) = (g.input(x.clone()), g.constant(v.clone()));
    let (y, jv) = net.jvp(&mut g, &store, xi, vi).unwrap();
    let lhs: f64 = g
        .value(jv)
        .data()
        .iter()
        .zip(u.data())
        .map(|(a, b)| a * b)
        .sum();
    let vjp = g.backward_with(y, u).unwrap();
    let rhs: f64 = vjp
        .wrt(xi)
        .unwrap()
        .data()
        .iter()
        .zip(v.data())
        .map(|(a, b)| a * b)
        .sum();
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn jvp_composed_loss_has_correct_parameter_gradients() {
    let mut store = ParamStore::new();
    let net = Mlp::new(
        &mut store,
        "net",
        &[3, 4, 2],
        Activation::Tanh,
        Activation::Tanh,
        &mut rng_from_seed(23),
    );
    let x = random(3, 3, -1.0, 1.0, 5);
    let v = random(3, 3, -1.0, 1.0, 6);
    let target = random(3, 2, -0.5, 0.5, 7);
    let report = check_params(&store, DEFAULT_STEP, |g, s| {
        let (xi, vi) = (g.constant(x.clone()), g.constant(v.clone()));
        let (_, jv) = net.jvp(g, s, xi, vi).unwrap();
        let t = g.constant(target.clone());
        conceptlab::nn::mean_row_sq_error(g, jv, t)
    });
    assert!(report.passes(TOL), "{report:?}");
}
