use chae::codec::special::EOS_ID;
use chae::codec::{assemble_input, pad_conditions, tokenize, ChaeCondition, EmotionLabel, Vocabulary};
use chae::model::{Model, ModelConfig, Supervision};
use chae::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `f` on fresh leaves, reduces it to a scalar with a fixed random
/// projection, and compares tape gradients with central differences.
fn check<F>(inputs: Vec<Tensor>, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let build = |tape: &mut Tape, xs: &[Tensor], proj: &Tensor| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(tape, &vars);
        let w = tape.constant(proj.clone());
        let m = tape.mul(out, w).unwrap();
        (tape.sum(m), vars)
    };
    let mut shape_tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|x| shape_tape.leaf(x.clone())).collect();
    let out = f(&mut shape_tape, &leaves);
    let [r, c] = shape_tape.shape(out);
    let proj = random(&mut ChaCha8Rng::seed_from_u64(99), r, c);

    let mut tape = Tape::new();
    let (loss, vars) = build(&mut tape, &inputs, &proj);
    tape.backward(loss).unwrap();
    let value = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let (l, _) = build(&mut t, xs, &proj);
        t.value(l).item()
    };

    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
        for j in 0..x.len() {
            let mut xs = inputs.clone();
            xs[i].data_mut()[j] += EPS;
            let up = value(&xs);
            xs[i].data_mut()[j] -= 2.0 * EPS;
            let down = value(&xs);
            let numeric = (up - down) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(5)
}

#[test]
fn primitives_match_finite_differences() {
    let mut g = rng();
    let a = random(&mut g, 3, 4);
    let b = random(&mut g, 4, 2);
    let c = random(&mut g, 3, 4);
    let row = random(&mut g, 1, 4);
    let col = random(&mut g, 3, 1);
    let pos = Tensor::new(3, 4, a.data().iter().map(|x| x.abs() + 0.5).collect()).unwrap();

    let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        ("matmul_bt", vec![a.clone(), c.clone()], Box::new(|t, v| t.matmul_bt(v[0], v[1]).unwrap())),
        ("add_row", vec![a.clone(), row.clone()], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("sub_col", vec![a.clone(), col.clone()], Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
        ("mul", vec![a.clone(), c.clone()], Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        ("mul_col", vec![a.clone(), col.clone()], Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        ("div", vec![a.clone(), pos.clone()], Box::new(|t, v| t.div(v[0], v[1]).unwrap())),
        ("affine", vec![a.clone()], Box::new(|t, v| t.affine(v[0], -1.5, 0.25))),
        ("concat_rows", vec![a.clone(), c.clone()], Box::new(|t, v| t.concat(&[v[0], v[1]], 0).unwrap())),
        ("concat_cols", vec![a.clone(), col.clone()], Box::new(|t, v| t.concat(&[v[0], v[1]], 1).unwrap())),
        ("slice_cols", vec![a.clone()], Box::new(|t, v| t.slice_cols(v[0], 1, 2).unwrap())),
        ("gather", vec![a.clone()], Box::new(|t, v| t.embedding_gather(v[0], &[2, 0, 2, 1]).unwrap())),
        ("sigmoid", vec![a.clone()], Box::new(|t, v| t.sigmoid(v[0]))),
        ("gelu", vec![a.clone()], Box::new(|t, v| t.gelu(v[0]))),
        ("softmax_rows", vec![a.clone()], Box::new(|t, v| t.softmax(v[0], 1).unwrap())),
        ("softmax_cols", vec![a.clone()], Box::new(|t, v| t.softmax(v[0], 0).unwrap())),
        ("log", vec![pos.clone()], Box::new(|t, v| t.log(v[0], 1e-12))),
        ("layer_norm", vec![a.clone(), row.clone(), row.clone()], Box::new(|t, v| t.layer_norm(v[0], v[1], v[2]).unwrap())),
        ("mean_rows", vec![a.clone()], Box::new(|t, v| t.mean(v[0], 0).unwrap())),
        ("mean_cols", vec![a.clone()], Box::new(|t, v| t.mean(v[0], 1).unwrap())),
        ("pick", vec![a.clone()], Box::new(|t, v| t.pick(v[0], &[3, 0, 1]).unwrap())),
        ("scatter", vec![a.clone()], Box::new(|t, v| t.scatter_cols(v[0], &[None, Some(4), Some(1), Some(4)], 6).unwrap())),
        (
            "restrict_renorm",
            vec![pos.clone()],
            Box::new(|t, v| t.restrict_renorm(v[0], &[false, true, true, false]).unwrap()),
        ),
        (
            "composite",
            vec![a.clone(), b.clone(), row.clone()],
            Box::new(|t, v| {
                let n = t.layer_norm(v[0], v[2], v[2]).unwrap();
                let h = t.matmul(n, v[1]).unwrap();
                let g = t.gelu(h);
                let s = t.softmax(g, 1).unwrap();
                let l = t.log(s, 1e-12);
                t.mean(l, 0).unwrap()
            }),
        ),
    ];
    for (name, inputs, f) in cases {
        let err = check(inputs, |t, v| f(t, v));
        assert!(err < 1e-4, "{name}: max relative error {err:e}");
    }
}

fn tiny_setup() -> (Model, chae::codec::ModelInput, Vec<usize>) {
    let mut vocab = Vocabulary::base();
    for w in tokenize("tom went to the market . he wanted to catch thief fast city") {
        vocab.insert(&w);
    }
    assert_eq!(vocab.len(), 32);
    let mut config = ModelConfig::new(vocab.len());
    config.d_model = 8;
    config.n_heads = 2;
    config.n_enc_layers = 1;
    config.n_dec_layers = 1;
    config.d_ff = 16;
    config.k = 2;
    let model = Model::new(config, 3).unwrap();
    let spec = pad_conditions(
        vec![ChaeCondition::new("tom", vec!["to catch the thief".into()], EmotionLabel::Anticipation)],
        2,
    )
    .unwrap();
    let input = assemble_input(&tokenize("tom went to the market ."), &spec, &vocab).unwrap();
    let mut target = vocab.encode(&tokenize("he wanted to catch the thief ."));
    target.push(EOS_ID);
    (model, input, target)
}

#[test]
fn full_model_loss_matches_finite_differences() {
    let (mut model, input, target) = tiny_setup();
    let alpha = [0.5, 1.0, 1.5, 1.0, 2.0, 1.0, 0.8, 1.2, 1.0];
    let emotions = [Some(EmotionLabel::Anticipation), Some(EmotionLabel::Fear)];
    let loss_of = |m: &Model| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, true);
        let sup = Supervision {
            input: &input,
            target: &target,
            emotions: &emotions,
        };
        let l = m.loss(&mut tape, &p, sup, &alpha).unwrap();
        tape.backward(l.total).unwrap();
        let grads = p
            .vars()
            .iter()
            .zip(m.params().tensors())
            .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
            .collect();
        (tape.value(l.total).item(), grads)
    };
    let (_, grads) = loss_of(&model);

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..model.params().len() {
        for j in 0..model.params().tensors()[i].len() {
            let orig = model.params().tensors()[i].data()[j];
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig + EPS;
            let up = loss_of(&model).0;
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig - EPS;
            let down = loss_of(&model).0;
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let err = rel_err(grads[i].data()[j], numeric);
            assert!(
                err < 1e-3,
                "{}[{j}]: analytic {} numeric {numeric}",
                model.params().names()[i],
                grads[i].data()[j]
            );
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert_eq!(checked, model.params().num_values());
    assert!(worst < 1e-3);
}
