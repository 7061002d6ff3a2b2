//! Exact-rational reference for the fixed-point datapath.
//!
//! Every intermediate value is a `BigRational` real number. Rounding and
//! clamping are expressed on reals and only converted back to integer codes
//! at the very end, so this shares no arithmetic with the crate under test.

#![allow(dead_code)]

use nnaccel::model_ir::ActivationKind;
use nnaccel::quantizer::{FixedPointFormat, QuantizedLayer, QuantizedModel};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub struct Oracle {
    ulp: BigRational,
    lo: BigRational,
    hi: BigRational,
}

fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

impl Oracle {
    pub fn new(fmt: FixedPointFormat) -> Self {
        let n = fmt.total_bits();
        let f = fmt.frac_bits();
        let ulp = BigRational::new(BigInt::one(), BigInt::one() << f);
        let lo = -int(1i64 << (n - 1)) * &ulp;
        let hi = int((1i64 << (n - 1)) - 1) * &ulp;
        Oracle { ulp, lo, hi }
    }

    pub fn real(&self, code: i64) -> BigRational {
        int(code) * &self.ulp
    }

    pub fn code(&self, v: &BigRational) -> i64 {
        let k = v / &self.ulp;
        assert!(k.is_integer(), "value is not on the grid");
        k.to_integer().to_i64().unwrap()
    }

    fn clamp(&self, v: BigRational) -> BigRational {
        if v > self.hi {
            self.hi.clone()
        } else if v < self.lo {
            self.lo.clone()
        } else {
            v
        }
    }

    /// Nearest grid point, ties toward +infinity, then saturation.
    pub fn round_half_up(&self, v: &BigRational) -> BigRational {
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let k = (v / &self.ulp + half).floor();
        self.clamp(k * &self.ulp)
    }

    /// Nearest grid point, ties to the even grid index, then saturation.
    pub fn round_half_even(&self, v: &BigRational) -> BigRational {
        let scaled = v / &self.ulp;
        let fl = scaled.floor();
        let frac = &scaled - &fl;
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let odd = !(fl.to_integer() % BigInt::from(2)).is_zero();
        let k = if frac > half || (frac == half && odd) {
            fl + BigRational::one()
        } else {
            fl
        };
        self.clamp(k * &self.ulp)
    }

    fn one(&self) -> BigRational {
        let one = BigRational::one();
        if one > self.hi { self.hi.clone() } else { one }
    }

    fn minus_one(&self) -> BigRational {
        let m = -BigRational::one();
        if m < self.lo { self.lo.clone() } else { m }
    }

    /// `x/4` truncated toward −infinity onto the grid, plus one half,
    /// clamped to [0, 1].
    pub fn hard_sigmoid(&self, x: &BigRational) -> BigRational {
        let quarter = (x / int(4) / &self.ulp).floor() * &self.ulp;
        let half = if self.ulp < BigRational::one() {
            BigRational::new(BigInt::one(), BigInt::from(2))
        } else {
            BigRational::zero()
        };
        let y = quarter + half;
        if y < BigRational::zero() {
            BigRational::zero()
        } else if y > self.one() {
            self.one()
        } else {
            y
        }
    }

    pub fn hard_tanh(&self, x: &BigRational) -> BigRational {
        if x > &self.one() {
            self.one()
        } else if x < &self.minus_one() {
            self.minus_one()
        } else {
            x.clone()
        }
    }

    pub fn activation(&self, kind: ActivationKind, x: &BigRational) -> BigRational {
        match kind {
            ActivationKind::HardSigmoid => self.hard_sigmoid(x),
            ActivationKind::HardTanh => self.hard_tanh(x),
            ActivationKind::ReLU => {
                if x.is_negative() {
                    BigRational::zero()
                } else {
                    x.clone()
                }
            }
        }
    }

    /// Σ w·x + b on reals, rounded once.
    fn affine(&self, w: &[i32], b: i32, x: &[BigRational]) -> BigRational {
        let mut acc = self.real(b as i64);
        for (wi, xi) in w.iter().zip(x) {
            acc += self.real(*wi as i64) * xi;
        }
        self.round_half_up(&acc)
    }

    pub fn infer(&self, model: &QuantizedModel, input: &[i32]) -> Vec<i64> {
        let mut v: Vec<BigRational> = input.iter().map(|&c| self.real(c as i64)).collect();
        for layer in &model.layers {
            v = match layer {
                QuantizedLayer::Linear {
                    in_features,
                    out_features,
                    weights,
                    bias,
                } => (0..*out_features)
                    .map(|o| {
                        let row = &weights.codes[o * in_features..(o + 1) * in_features];
                        self.affine(row, bias.codes[o], &v)
                    })
                    .collect(),
                QuantizedLayer::Lstm {
                    input_size,
                    hidden_size,
                    gate_weights,
                    gate_bias,
                    ..
                } => {
                    let (n_in, h) = (*input_size, *hidden_size);
                    let cols = n_in + h;
                    let mut hs = vec![BigRational::zero(); h];
                    let mut cs = vec![BigRational::zero(); h];
                    for x_t in v.chunks(n_in) {
                        let xh: Vec<BigRational> = x_t.iter().chain(hs.iter()).cloned().collect();
                        let z: Vec<BigRational> = (0..4 * h)
                            .map(|r| {
                                self.affine(&gate_weights.codes[r * cols..(r + 1) * cols], gate_bias.codes[r], &xh)
                            })
                            .collect();
                        let mut h_next = Vec::with_capacity(h);
                        let mut c_next = Vec::with_capacity(h);
                        for k in 0..h {
                            let i = self.hard_sigmoid(&z[k]);
                            let f = self.hard_sigmoid(&z[h + k]);
                            let g = self.hard_tanh(&z[2 * h + k]);
                            let o = self.hard_sigmoid(&z[3 * h + k]);
                            let c = self.round_half_up(&(f * &cs[k] + i * g));
                            let hn = self.round_half_up(&(o * self.hard_tanh(&c)));
                            c_next.push(c);
                            h_next.push(hn);
                        }
                        hs = h_next;
                        cs = c_next;
                    }
                    hs
                }
                QuantizedLayer::Activation { function } => {
                    v.iter().map(|x| self.activation(*function, x)).collect()
                }
            };
        }
        v.iter().map(|x| self.code(x)).collect()
    }

    /// Exact value of a finite f64.
    pub fn from_f64(x: f64) -> BigRational {
        BigRational::from_float(x).expect("finite")
    }
}
