//! Arithmetic in the prime field F_p with p = 2^61 - 1.
//!
//! The Mersenne structure keeps reduction branch-light: a 128-bit product
//! folds into the field with shifts and adds because 2^61 ≡ 1 (mod p).
//! Elements are always stored canonically (`0 <= value < p`), so equality,
//! hashing and serialization are plain word operations.
//!
//! The module also provides the deterministic random source used by the
//! certification protocol (a ChaCha stream seeded from a single `u64`) and a
//! small quadratic-polynomial type for prover answers, which are polynomials
//! of degree at most two in one challenge variable.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// The field modulus, the Mersenne prime 2^61 - 1.
pub const P: u64 = (1u64 << 61) - 1;

/// An element of F_p in canonical representation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Fp(u64);

/// Folds a value below 2^62 into the canonical range.
#[inline]
fn reduce(x: u64) -> u64 {
    debug_assert!(x < (1u64 << 62));
    let r = (x & P) + (x >> 61);
    if r >= P {
        r - P
    } else {
        r
    }
}

impl Fp {
    pub const ZERO: Fp = Fp(0);
    pub const ONE: Fp = Fp(1);

    /// Builds an element from an arbitrary integer, reducing mod p.
    #[inline]
    pub fn new(x: u64) -> Fp {
        // One fold brings any u64 below 2^61 + 8, a second canonicalizes.
        Fp(reduce((x & P) + (x >> 61)))
    }

    /// The canonical representative in `0..p`.
    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Converts a boolean to 0 or 1.
    #[inline]
    pub fn from_bool(b: bool) -> Fp {
        Fp(b as u64)
    }

    #[inline]
    pub fn add(self, rhs: Fp) -> Fp {
        Fp(reduce(self.0 + rhs.0))
    }

    #[inline]
    pub fn sub(self, rhs: Fp) -> Fp {
        Fp(reduce(self.0 + P - rhs.0))
    }

    #[inline]
    pub fn neg(self) -> Fp {
        Fp(reduce(P - self.0))
    }

    #[inline]
    pub fn mul(self, rhs: Fp) -> Fp {
        let t = (self.0 as u128) * (rhs.0 as u128);
        // 2^61 ≡ 1 (mod p): fold the high limb onto the low one.
        let folded = ((t & (P as u128)) + (t >> 61)) as u64;
        Fp(reduce(folded))
    }

    /// Raises to an arbitrary u64 power by square-and-multiply.
    pub fn pow(self, mut e: u64) -> Fp {
        let mut base = self;
        let mut acc = Fp::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat: a^(p-2).
    ///
    /// Panics on zero, which has no inverse.
    pub fn inv(self) -> Fp {
        assert!(!self.is_zero(), "zero has no multiplicative inverse");
        self.pow(P - 2)
    }

    /// The inverse of two, used when counting claims are rewritten to
    /// field-evaluation claims at the all-halves point.
    pub fn half() -> Fp {
        // (p + 1) / 2 is the inverse of 2 for an odd modulus.
        Fp((P + 1) / 2)
    }

    /// Serializes to 8 little-endian bytes.
    #[inline]
    pub fn to_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    /// Deserializes 8 little-endian bytes, rejecting non-canonical values.
    pub fn from_bytes(b: [u8; 8]) -> Option<Fp> {
        let v = u64::from_le_bytes(b);
        if v < P {
            Some(Fp(v))
        } else {
            None
        }
    }

    /// Draws a uniform element by 61-bit rejection sampling.
    pub fn random(rng: &mut RandomSource) -> Fp {
        loop {
            // Top 61 bits of the word; only p itself (all ones... minus, in
            // fact the two values p and p+... anything >= p) is rejected.
            let x = rng.next_u64() >> 3;
            if x < P {
                return Fp(x);
            }
        }
    }
}

impl std::ops::Add for Fp {
    type Output = Fp;
    #[inline]
    fn add(self, rhs: Fp) -> Fp {
        Fp::add(self, rhs)
    }
}

impl std::ops::Sub for Fp {
    type Output = Fp;
    #[inline]
    fn sub(self, rhs: Fp) -> Fp {
        Fp::sub(self, rhs)
    }
}

impl std::ops::Mul for Fp {
    type Output = Fp;
    #[inline]
    fn mul(self, rhs: Fp) -> Fp {
        Fp::mul(self, rhs)
    }
}

impl std::ops::Neg for Fp {
    type Output = Fp;
    #[inline]
    fn neg(self) -> Fp {
        Fp::neg(self)
    }
}

impl std::fmt::Debug for Fp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for Fp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for Fp {
    fn from(x: u64) -> Fp {
        Fp::new(x)
    }
}

/// Deterministic random source for the protocol.
///
/// All protocol randomness is owned by the verifier and derives from a single
/// 64-bit seed, so runs are reproducible and transcripts byte-compare across
/// transports. ChaCha12 gives a platform-independent stream.
pub struct RandomSource {
    rng: ChaCha12Rng,
}

impl RandomSource {
    pub fn from_seed(seed: u64) -> RandomSource {
        RandomSource {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Draws a uniform field element.
    pub fn field(&mut self) -> Fp {
        Fp::random(self)
    }
}

/// Derives an independent seed for repetition `index` from a base seed.
///
/// SplitMix64 finalizer; distinct indexes give well-separated streams.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A univariate polynomial of degree at most two over F_p.
///
/// Prover answers in the certification protocol are always of this shape:
/// the claimed value of a gate polynomial with one coordinate left free.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Poly2 {
    /// Coefficients `c[0] + c[1] x + c[2] x^2`.
    pub c: [Fp; 3],
}

impl Poly2 {
    pub const ZERO: Poly2 = Poly2 {
        c: [Fp::ZERO, Fp::ZERO, Fp::ZERO],
    };

    pub fn constant(k: Fp) -> Poly2 {
        Poly2 {
            c: [k, Fp::ZERO, Fp::ZERO],
        }
    }

    /// The identity polynomial `x`.
    pub fn x() -> Poly2 {
        Poly2 {
            c: [Fp::ZERO, Fp::ONE, Fp::ZERO],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.c[1].is_zero() && self.c[2].is_zero()
    }

    pub fn degree_at_most_one(&self) -> bool {
        self.c[2].is_zero()
    }

    pub fn eval(&self, x: Fp) -> Fp {
        // Horner: c0 + x (c1 + x c2)
        self.c[0] + x * (self.c[1] + x * self.c[2])
    }

    pub fn add(&self, rhs: &Poly2) -> Poly2 {
        Poly2 {
            c: [
                self.c[0] + rhs.c[0],
                self.c[1] + rhs.c[1],
                self.c[2] + rhs.c[2],
            ],
        }
    }

    pub fn sub(&self, rhs: &Poly2) -> Poly2 {
        Poly2 {
            c: [
                self.c[0] - rhs.c[0],
                self.c[1] - rhs.c[1],
                self.c[2] - rhs.c[2],
            ],
        }
    }

    pub fn scale(&self, k: Fp) -> Poly2 {
        Poly2 {
            c: [self.c[0] * k, self.c[1] * k, self.c[2] * k],
        }
    }

    /// Full product, asserting the result still fits in degree two.
    ///
    /// Honest prover recursions only ever multiply polynomials whose product
    /// has degree at most two (a product of two degree-one factors at most).
    pub fn mul(&self, rhs: &Poly2) -> Poly2 {
        let a = &self.c;
        let b = &rhs.c;
        let c3 = a[1] * b[2] + a[2] * b[1];
        let c4 = a[2] * b[2];
        debug_assert!(
            c3.is_zero() && c4.is_zero(),
            "polynomial product escapes degree two"
        );
        Poly2 {
            c: [
                a[0] * b[0],
                a[0] * b[1] + a[1] * b[0],
                a[0] * b[2] + a[1] * b[1] + a[2] * b[0],
            ],
        }
    }
}
