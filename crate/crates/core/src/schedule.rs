//! Trading schedules.
//!
//! A schedule lists the trading dates of a market. Each slot carries the
//! calendar time whose price is used, the tree level its decisions attach
//! to, and the number of periods over which its cash flows earn interest
//! until liquidation. The full market uses slots `0..=T`; the market with
//! period `t` eliminated drops `t`, lets slot `t-1` decide on time-`t`
//! information and removes one period of interest before the gap.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    /// Calendar time of the price used at this slot.
    pub time: usize,
    /// Tree level whose nodes carry the decisions of this slot.
    pub decision_time: usize,
    /// Compounding periods from this slot to liquidation.
    pub exponent: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    slots: Vec<Slot>,
}

impl Schedule {
    pub fn full(horizon: usize) -> Self {
        Schedule {
            slots: (0..=horizon)
                .map(|u| Slot { time: u, decision_time: u, exponent: horizon - u })
                .collect(),
        }
    }

    /// Schedule with period `t` (between `t-1` and `t`) eliminated.
    pub fn reduced(horizon: usize, t: usize) -> Self {
        assert!(t >= 1 && t <= horizon, "eliminated period out of range");
        let slots = (0..=horizon)
            .filter(|&u| u != t)
            .map(|u| Slot {
                time: u,
                decision_time: if u == t - 1 { t } else { u },
                exponent: horizon - u - usize::from(u < t),
            })
            .collect();
        Schedule { slots }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, k: usize) -> &Slot {
        &self.slots[k]
    }

    /// Slot whose price time is `time`.
    pub fn slot_of_time(&self, time: usize) -> Option<usize> {
        self.slots.iter().position(|s| s.time == time)
    }

    /// Slot whose decisions live on tree level `level`.
    pub fn slot_of_level(&self, level: usize) -> Option<usize> {
        self.slots.iter().position(|s| s.decision_time == level)
    }

    /// Slots at which a lot can be bought (all but the liquidation slot).
    pub fn lot_slots(&self) -> std::ops::Range<usize> {
        0..self.slots.len().saturating_sub(1)
    }
}
