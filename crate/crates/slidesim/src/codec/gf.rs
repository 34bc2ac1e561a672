//! Arithmetic in GF(2^16) via log/antilog tables.

use std::sync::OnceLock;

/// Primitive polynomial x^16 + x^5 + x^3 + x^2 + 1.
const POLY: u32 = 0x1002D;
const ORDER: usize = 65535;

struct Tables {
    exp: Vec<u16>,
    log: Vec<u16>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut exp = vec![0u16; 2 * ORDER];
        let mut log = vec![0u16; ORDER + 1];
        let mut x: u32 = 1;
        for (i, e) in exp.iter_mut().take(ORDER).enumerate() {
            *e = x as u16;
            log[x as usize] = i as u16;
            x <<= 1;
            if x & 0x10000 != 0 {
                x ^= POLY;
            }
        }
        exp.copy_within(0..ORDER, ORDER);
        Tables { exp, log }
    })
}

#[inline]
pub fn add(a: u16, b: u16) -> u16 {
    a ^ b
}

#[inline]
pub fn mul(a: u16, b: u16) -> u16 {
    if a == 0 || b == 0 {
        return 0;
    }
    let t = tables();
    t.exp[t.log[a as usize] as usize + t.log[b as usize] as usize]
}

/// Multiplicative inverse; panics on zero.
#[inline]
pub fn inv(a: u16) -> u16 {
    assert!(a != 0, "inverse of zero in GF(2^16)");
    let t = tables();
    t.exp[ORDER - t.log[a as usize] as usize]
}

#[inline]
pub fn div(a: u16, b: u16) -> u16 {
    mul(a, inv(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_has_full_order() {
        let t = tables();
        let mut seen = vec![false; ORDER + 1];
        for &e in &t.exp[..ORDER] {
            assert!(!seen[e as usize], "element repeats before full cycle");
            seen[e as usize] = true;
        }
        assert!(!seen[0]);
    }

    #[test]
    fn field_axioms_on_samples() {
        let samples = [1u16, 2, 3, 0x1234, 0x8000, 0xffff, 0x00ff, 0x0100];
        for &a in &samples {
            assert_eq!(mul(a, inv(a)), 1);
            assert_eq!(mul(a, 1), a);
            assert_eq!(mul(a, 0), 0);
            for &b in &samples {
                assert_eq!(mul(a, b), mul(b, a));
                for &c in &samples {
                    assert_eq!(mul(a, add(b, c)), add(mul(a, b), mul(a, c)));
                    assert_eq!(mul(mul(a, b), c), mul(a, mul(b, c)));
                }
            }
        }
    }

    #[test]
    fn schoolbook_multiplication_agrees() {
        fn slow(a: u16, b: u16) -> u16 {
            let mut acc: u32 = 0;
            for i in 0..16 {
                if b >> i & 1 == 1 {
                    acc ^= (a as u32) << i;
                }
            }
            for bit in (16..32).rev() {
                if acc >> bit & 1 == 1 {
                    acc ^= POLY << (bit - 16);
                }
            }
            acc as u16
        }
        for a in (0..=u16::MAX).step_by(4099) {
            for b in (0..=u16::MAX).step_by(3571) {
                assert_eq!(mul(a, b), slow(a, b));
            }
        }
    }
}
