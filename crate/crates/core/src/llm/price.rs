use std::fmt;
use std::iter::Sum;
use std::ops::Add;
use std::str::FromStr;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

pub const MONEY_SCALE: u32 = 6;

/// Exact decimal amount of money, always carried at 6 fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(Decimal);

impl Money {
    pub const ZERO: Money = Money(Decimal::ZERO);

    /// Rounds half-to-even to 6 places.
    pub fn from_decimal(value: Decimal) -> Self {
        let mut rounded =
            value.round_dp_with_strategy(MONEY_SCALE, RoundingStrategy::MidpointNearestEven);
        rounded.rescale(MONEY_SCALE);
        Money(rounded)
    }

    pub fn as_decimal(&self) -> Decimal {
        self.0
    }

    /// Mean over `n` items, rounded half-to-even. `n` must be positive.
    pub fn average(total: Money, n: usize) -> Money {
        assert!(n > 0, "average over zero items");
        Money::from_decimal(total.0 / Decimal::from(n))
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.0)
    }
}

impl FromStr for Money {
    type Err = rust_decimal::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = s.trim().trim_start_matches('$');
        Ok(Money::from_decimal(Decimal::from_str_exact(raw)?))
    }
}

impl Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money::from_decimal(self.0 + rhs.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.copied().sum()
    }
}

impl Serialize for Money {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Dollar rates per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceModel {
    #[serde(with = "rust_decimal::serde::str")]
    pub prompt_rate: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub completion_rate: Decimal,
}

impl PriceModel {
    pub fn new(prompt_rate: Decimal, completion_rate: Decimal) -> Result<Self, String> {
        if prompt_rate.is_sign_negative() || completion_rate.is_sign_negative() {
            return Err("price rates must be non-negative".into());
        }
        Ok(Self {
            prompt_rate,
            completion_rate,
        })
    }

    pub fn zero() -> Self {
        Self {
            prompt_rate: Decimal::ZERO,
            completion_rate: Decimal::ZERO,
        }
    }

    pub fn price(&self, prompt_tokens: u64, completion_tokens: u64) -> Money {
        price(prompt_tokens, completion_tokens, self)
    }
}

impl Default for PriceModel {
    /// $3 per million tokens on both sides.
    fn default() -> Self {
        Self {
            prompt_rate: Decimal::from(3),
            completion_rate: Decimal::from(3),
        }
    }
}

pub fn price(prompt_tokens: u64, completion_tokens: u64, model: &PriceModel) -> Money {
    let million = Decimal::from(1_000_000u32);
    let cost = Decimal::from(prompt_tokens) * model.prompt_rate / million
        + Decimal::from(completion_tokens) * model.completion_rate / million;
    Money::from_decimal(cost)
}

/// `ceil(chars / 4)`, a rough estimate for providers that report no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_thousand_tokens_at_three_dollars() {
        let m = PriceModel::default();
        let p = price(2_000, 0, &m);
        assert_eq!(p.to_string(), "$0.006000");
        assert_eq!(price(0, 0, &m), Money::ZERO);
        assert_eq!(price(1_000_000, 0, &m).to_string(), "$3.000000");
    }

    #[test]
    fn rounds_half_even() {
        let m = PriceModel::new(Decimal::new(5, 1), Decimal::ZERO).unwrap();
        // 1 token * $0.5 / 1M = 0.0000005 -> ties to even 0.000000
        assert_eq!(price(1, 0, &m), Money::ZERO);
        // 3 tokens -> 0.0000015 -> 0.000002
        assert_eq!(price(3, 0, &m).to_string(), "$0.000002");
    }

    #[test]
    fn estimator() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcdefgh"), 2);
        assert_eq!(estimate_tokens("abcdefghi"), 3);
        assert_eq!(estimate_tokens("ééé"), 1);
    }

    #[test]
    fn negative_rates_rejected() {
        assert!(PriceModel::new(Decimal::from(-1), Decimal::ZERO).is_err());
    }

    #[test]
    fn money_serde_round_trip() {
        let m: Money = "0.15".parse().unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "\"0.150000\"");
        assert_eq!(serde_json::from_str::<Money>(&json).unwrap(), m);
    }

    proptest! {
        #[test]
        fn price_is_additive(
            a_in in 0u64..5_000_000, a_out in 0u64..5_000_000,
            b_in in 0u64..5_000_000, b_out in 0u64..5_000_000,
            rate_in in 0u32..100, rate_out in 0u32..100,
        ) {
            let m = PriceModel::new(Decimal::from(rate_in), Decimal::from(rate_out)).unwrap();
            prop_assert_eq!(
                price(a_in, a_out, &m) + price(b_in, b_out, &m),
                price(a_in + b_in, a_out + b_out, &m)
            );
        }

        #[test]
        fn zero_rate_is_free(a in 0u64..u32::MAX as u64, b in 0u64..u32::MAX as u64) {
            prop_assert_eq!(price(a, b, &PriceModel::zero()), Money::ZERO);
        }
    }
}
