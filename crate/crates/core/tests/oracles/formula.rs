//! Random formula programs with a separately written renderer and evaluator.

use rand::seq::IndexedRandom;
use rand::Rng;

#[derive(Debug, Clone)]
pub enum Node {
    Num(f64),
    Op(&'static str, Vec<Node>),
}

/// Operator name and arity, as written in formula text.
pub const OPS: &[(&str, usize)] = &[
    ("Add", 2),
    ("Subtract", 2),
    ("Multiply", 2),
    ("Divide", 2),
    ("Power", 2),
    ("Sqrt", 1),
    ("Log", 1),
    ("Negate", 1),
    ("Inverse", 1),
    ("Max", 2),
    ("Min", 2),
    ("Floor", 1),
    ("Abs", 1),
    ("Const_pi", 0),
    ("Const_100", 0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    DivideByZero,
    NegativeRoot,
    BadLog,
    Overflow,
}

fn checked(v: f64) -> Result<f64, Fault> {
    if v.is_nan() || v.is_infinite() {
        Err(Fault::Overflow)
    } else {
        Ok(v)
    }
}

/// Left-to-right, depth-first evaluation; the first fault wins.
pub fn evaluate(node: &Node) -> Result<f64, Fault> {
    let (name, args) = match node {
        Node::Num(v) => return checked(*v),
        Node::Op(name, args) => (*name, args),
    };
    let mut vals = [0.0f64; 2];
    for (slot, arg) in vals.iter_mut().zip(args) {
        *slot = evaluate(arg)?;
    }
    let [a, b] = vals;
    let v = match name {
        "Add" => a + b,
        "Subtract" => a - b,
        "Multiply" => a * b,
        "Divide" if b == 0.0 => return Err(Fault::DivideByZero),
        "Divide" => a / b,
        "Power" => a.powf(b),
        "Sqrt" if a < 0.0 => return Err(Fault::NegativeRoot),
        "Sqrt" => a.sqrt(),
        "Log" if a <= 0.0 => return Err(Fault::BadLog),
        "Log" => a.ln(),
        "Negate" => -a,
        "Inverse" if a == 0.0 => return Err(Fault::DivideByZero),
        "Inverse" => 1.0 / a,
        "Max" => a.max(b),
        "Min" => a.min(b),
        "Floor" => a.floor(),
        "Abs" => a.abs(),
        "Const_pi" => std::f64::consts::PI,
        "Const_100" => 100.0,
        other => panic!("unknown oracle operator {other}"),
    };
    checked(v)
}

/// Renders with randomized operator case and spacing.
pub fn render<R: Rng>(node: &Node, rng: &mut R) -> String {
    match node {
        Node::Num(v) => format!("{v}"),
        Node::Op(name, args) => {
            let name: String = match rng.random_range(0..3) {
                0 => name.to_string(),
                1 => name.to_lowercase(),
                _ => name.to_uppercase(),
            };
            if args.is_empty() && rng.random_bool(0.5) {
                return name;
            }
            let sep = [",", ", ", " , "].choose(rng).unwrap();
            let inner: Vec<String> = args.iter().map(|a| render(a, rng)).collect();
            format!("{name}({})", inner.join(sep))
        }
    }
}

fn random_number<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => -(rng.random_range(1..100) as f64),
        2 => rng.random_range(-1000.0..1000.0),
        3 => rng.random_range(0.0..1.0),
        _ => rng.random_range(1..1000) as f64,
    }
}

pub fn random_node<R: Rng>(rng: &mut R, depth: usize) -> Node {
    if depth == 0 || rng.random_bool(0.3) {
        return Node::Num(random_number(rng));
    }
    let (name, arity) = *OPS.choose(rng).unwrap();
    Node::Op(name, (0..arity).map(|_| random_node(rng, depth - 1)).collect())
}
