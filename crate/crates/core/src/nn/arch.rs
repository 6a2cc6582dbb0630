//! Closure architectures for each experiment family.

use super::{Activation, LayerSpec, Network};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureFamily {
    Markovian,
    Discrete,
    Distributed,
}

impl ClosureFamily {
    pub const ALL: [ClosureFamily; 3] = [ClosureFamily::Markovian, ClosureFamily::Discrete, ClosureFamily::Distributed];

    pub fn name(self) -> &'static str {
        match self {
            ClosureFamily::Markovian => "markovian",
            ClosureFamily::Discrete => "discrete",
            ClosureFamily::Distributed => "distributed",
        }
    }
}

/// The closure network `f` and, for distributed delays, the memory network `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arch {
    pub f: Network,
    pub g: Option<Network>,
}

impl Arch {
    pub fn n_params(&self) -> usize {
        self.f.n_params() + self.g.as_ref().map_or(0, Network::n_params)
    }
}

use Activation::{Linear, Swish, Tanh};

fn dense(inp: usize, out: usize, act: Activation) -> LayerSpec {
    LayerSpec::Dense { inp, out, act }
}

fn conv(in_ch: usize, out_ch: usize, kernel: usize, act: Activation) -> LayerSpec {
    LayerSpec::Conv1d { in_ch, out_ch, kernel, act }
}

fn convt(in_ch: usize, out_ch: usize, kernel: usize, act: Activation) -> LayerSpec {
    LayerSpec::Conv1dTranspose { in_ch, out_ch, kernel, act }
}

fn net(shape: (usize, usize), layers: Vec<LayerSpec>) -> Network {
    Network::new(shape, layers).expect("built-in architecture is shape consistent")
}

/// A chain of pointwise (kernel 1) convolutions through the given channel counts.
fn pointwise_chain(channels: &[usize], act: Activation) -> Vec<LayerSpec> {
    channels.windows(2).map(|w| conv(w[0], w[1], 1, act)).collect()
}

/// Three POD coefficients of the Burgers ROM.
pub fn exp1(family: ClosureFamily) -> Arch {
    match family {
        ClosureFamily::Markovian => {
            let mut l = vec![dense(3, 5, Tanh)];
            l.extend((0..4).map(|_| dense(5, 5, Tanh)));
            l.push(dense(5, 3, Linear));
            Arch { f: net((1, 3), l), g: None }
        }
        ClosureFamily::Discrete => Arch {
            f: net((1, 3), vec![LayerSpec::SimpleRnn { inp: 3, hidden: 5, act: Tanh }, dense(5, 3, Linear)]),
            g: None,
        },
        ClosureFamily::Distributed => Arch {
            f: net((1, 5), vec![dense(5, 5, Tanh), dense(5, 5, Tanh), dense(5, 3, Linear)]),
            g: Some(net((1, 3), vec![dense(3, 3, Tanh), dense(3, 3, Tanh), dense(3, 2, Linear)])),
        },
    }
}

/// Coarse 25-point Burgers grid.
pub fn exp2(family: ClosureFamily) -> Arch {
    let n = 25;
    match family {
        ClosureFamily::Markovian => Arch {
            f: net(
                (n, 1),
                vec![
                    conv(1, 4, 3, Swish),
                    conv(4, 5, 3, Swish),
                    conv(5, 5, 3, Swish),
                    conv(5, 5, 3, Swish),
                    conv(5, 5, 3, Swish),
                    convt(5, 3, 3, Swish),
                    convt(3, 2, 3, Swish),
                    convt(2, 2, 3, Swish),
                    convt(2, 2, 3, Swish),
                    convt(2, 1, 3, Linear),
                ],
            ),
            g: None,
        },
        ClosureFamily::Discrete => Arch {
            f: net(
                (n, 1),
                vec![
                    LayerSpec::ConvRnn { in_ch: 1, hidden: 3, kernel: 3, act: Swish },
                    conv(3, 2, 3, Swish),
                    convt(2, 2, 3, Swish),
                    convt(2, 1, 3, Linear),
                ],
            ),
            g: None,
        },
        ClosureFamily::Distributed => Arch {
            f: net(
                (n, 2),
                vec![
                    conv(2, 4, 3, Swish),
                    conv(4, 5, 3, Swish),
                    conv(5, 5, 3, Swish),
                    convt(5, 3, 3, Swish),
                    convt(3, 2, 3, Swish),
                    convt(2, 2, 3, Swish),
                    convt(2, 1, 3, Linear),
                ],
            ),
            g: Some(net(
                (n, 1),
                vec![
                    conv(1, 2, 3, Swish),
                    conv(2, 3, 3, Swish),
                    convt(3, 3, 3, Swish),
                    convt(3, 3, 3, Swish),
                    convt(3, 1, 3, Linear),
                ],
            )),
        },
    }
}

/// 0-D NPZ closure, output constrained to conserve total biomass.
pub fn exp3a(family: ClosureFamily) -> Arch {
    match family {
        ClosureFamily::Markovian => {
            let mut l = vec![dense(3, 7, Tanh)];
            l.extend((0..5).map(|_| dense(7, 7, Tanh)));
            l.push(dense(7, 1, Linear));
            l.push(LayerSpec::BioConstrain);
            Arch { f: net((1, 3), l), g: None }
        }
        ClosureFamily::Discrete => Arch {
            f: net(
                (1, 3),
                vec![
                    LayerSpec::SimpleRnn { inp: 3, hidden: 7, act: Tanh },
                    dense(7, 7, Tanh),
                    dense(7, 1, Linear),
                    LayerSpec::BioConstrain,
                ],
            ),
            g: None,
        },
        ClosureFamily::Distributed => Arch {
            f: net((1, 7), vec![dense(7, 7, Tanh), dense(7, 7, Tanh), dense(7, 1, Linear), LayerSpec::BioConstrain]),
            g: Some(net((1, 3), vec![dense(3, 5, Tanh), dense(5, 5, Tanh), dense(5, 4, Linear)])),
        },
    }
}

/// 1-D column NPZ closure on 20 depth points.
pub fn exp3b(family: ClosureFamily) -> Arch {
    let n = 20;
    let tail = |first: usize| {
        let mut l = vec![LayerSpec::AddExtraChannels];
        l.extend(pointwise_chain(&[first + 2, 7, 9, 9, 7, 5, 3], Swish));
        l.push(conv(3, 1, 1, Linear));
        l.push(LayerSpec::BioConstrain);
        l
    };
    match family {
        ClosureFamily::Markovian => {
            let mut l = vec![LayerSpec::AddExtraChannels];
            l.extend(pointwise_chain(&[5, 5, 7, 9, 11, 13, 13, 11, 9, 7, 5, 3], Swish));
            l.push(conv(3, 1, 1, Linear));
            l.push(LayerSpec::BioConstrain);
            Arch { f: net((n, 3), l), g: None }
        }
        ClosureFamily::Discrete => {
            let mut l = vec![LayerSpec::ConvRnn { in_ch: 3, hidden: 5, kernel: 1, act: Swish }];
            l.extend(tail(5));
            Arch { f: net((n, 3), l), g: None }
        }
        ClosureFamily::Distributed => {
            let mut g = pointwise_chain(&[3, 3, 5, 7, 5], Swish);
            g.push(conv(5, 2, 1, Linear));
            Arch { f: net((n, 5), tail(5)), g: Some(net((n, 3), g)) }
        }
    }
}

/// Two-state linear test system used by the gradient checks.
pub fn toy(family: ClosureFamily) -> Arch {
    match family {
        ClosureFamily::Markovian => Arch { f: net((1, 2), vec![dense(2, 4, Tanh), dense(4, 2, Linear)]), g: None },
        ClosureFamily::Discrete => Arch {
            f: net((1, 2), vec![LayerSpec::SimpleRnn { inp: 2, hidden: 4, act: Tanh }, dense(4, 2, Linear)]),
            g: None,
        },
        ClosureFamily::Distributed => Arch {
            f: net((1, 4), vec![dense(4, 4, Tanh), dense(4, 2, Linear)]),
            g: Some(net((1, 2), vec![dense(2, 3, Tanh), dense(3, 2, Linear)])),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_one_and_two_counts() {
        let counts = |f: fn(ClosureFamily) -> Arch| ClosureFamily::ALL.map(|k| f(k).n_params());
        assert_eq!(counts(exp1), [158, 63, 110]);
        assert_eq!(counts(exp2), [424, 110, 361]);
    }

    #[test]
    fn experiment_three_counts() {
        let counts = |f: fn(ClosureFamily) -> Arch| ClosureFamily::ALL.map(|k| f(k).n_params());
        assert_eq!(counts(exp3a), [317, 142, 195]);
        assert_eq!(counts(exp3b), [987, 426, 477]);
    }

    #[test]
    fn output_shapes_match_states() {
        for fam in ClosureFamily::ALL {
            assert_eq!(exp1(fam).f.output_shape(), (1, 3));
            assert_eq!(exp2(fam).f.output_shape(), (25, 1));
            assert_eq!(exp3a(fam).f.output_shape(), (1, 3));
            assert_eq!(exp3b(fam).f.output_shape(), (20, 3));
            assert_eq!(toy(fam).f.output_shape(), (1, 2));
        }
    }

    #[test]
    fn serde_round_trip_rebuilds_layout() {
        let a = exp3b(ClosureFamily::Discrete).f;
        let s = serde_json::to_string(&a).unwrap();
        let b: Network = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.n_params(), 426);
    }
}
