//! Slotted spectrum-sharing environment for a single D2D pair.
//!
//! Each slot a cellular user (CU) occupies the shared band with probability
//! `p_access`; an active CU sits inside the protected area around the BS with
//! probability `p_protected`. The D2D transmitter picks one of three actions
//! at the start of the slot and is rewarded with the rate it achieved, or with
//! the collision penalty when it transmits actively over an unprotected CU.
//!
//! Every slot draws the same two uniforms regardless of configuration, so
//! runs that differ only in `p_access` or `p_protected` see coupled CU
//! processes under a common seed.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, dbm_to_watts, LinkGeometry};
use crate::error::{Error, Result};

/// What the D2D transmitter does in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Idle = 0,
    Active = 1,
    Backscatter = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Idle, Action::Active, Action::Backscatter];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        match i {
            0 => Ok(Action::Idle),
            1 => Ok(Action::Active),
            2 => Ok(Action::Backscatter),
            _ => Err(Error::InvalidAction(i)),
        }
    }

    fn transmits(self) -> bool {
        self != Action::Idle
    }
}

/// Occupancy of the shared channel observed at the end of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelState {
    Idle = 0,
    CuOnly = 1,
    D2dOnly = 2,
    Both = 3,
}

impl ChannelState {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn observe(cu_active: bool, action: Action) -> ChannelState {
        match (cu_active, action.transmits()) {
            (false, false) => ChannelState::Idle,
            (true, false) => ChannelState::CuOnly,
            (false, true) => ChannelState::D2dOnly,
            (true, true) => ChannelState::Both,
        }
    }
}

/// Radio constants shared by every episode. Powers are given in dBm here and
/// converted once when a [`LinkGeometry`] is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub freq_ghz: f64,
    pub bandwidth_hz: f64,
    pub d2d_power_dbm: f64,
    pub bs_power_dbm: f64,
    pub noise_dbm: f64,
    pub alpha: f64,
    pub antenna_area: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            freq_ghz: 2.0,
            bandwidth_hz: 20e6,
            d2d_power_dbm: 23.0,
            bs_power_dbm: 40.0,
            noise_dbm: -114.0,
            alpha: 0.6,
            antenna_area: 0.0086,
        }
    }
}

impl RadioConfig {
    pub fn geometry(&self, d_tr: f64, d_st: f64) -> LinkGeometry {
        LinkGeometry {
            d_tr,
            d_st,
            freq_ghz: self.freq_ghz,
            bandwidth_hz: self.bandwidth_hz,
            d2d_power_w: dbm_to_watts(self.d2d_power_dbm),
            bs_power_w: dbm_to_watts(self.bs_power_dbm),
            noise_w: dbm_to_watts(self.noise_dbm),
            alpha: self.alpha,
            antenna_area: self.antenna_area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub p_access: f64,
    pub p_protected: f64,
    /// Reward for an active transmission that collides with an unprotected CU.
    pub penalty: f64,
    /// BS to D2D-Tx distance range, meters.
    pub d_st_range: [f64; 2],
    /// D2D-Tx to D2D-Rx distance range, meters.
    pub d_tr_range: [f64; 2],
    pub radio: RadioConfig,
    /// Slots per episode. Distances are redrawn at every reset.
    pub horizon: usize,
    pub seed: u64,
    /// When set, backscattering only earns its rate in slots where the BS is
    /// serving a CU; otherwise there is nothing to reflect and the slot
    /// yields zero.
    pub backscatter_needs_cu: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            p_access: 0.8,
            p_protected: 0.2,
            penalty: -100.0,
            d_st_range: [100.0, 1000.0],
            d_tr_range: [10.0, 100.0],
            radio: RadioConfig::default(),
            horizon: 100,
            seed: 0,
            backscatter_needs_cu: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_access", self.p_access), ("p_protected", self.p_protected)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, [lo, hi]) in [("d_st_range", self.d_st_range), ("d_tr_range", self.d_tr_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("{name} must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if !self.penalty.is_finite() || self.penalty > 0.0 {
            return Err(Error::Config(format!("penalty must be finite and <= 0, got {}", self.penalty)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one slot".into()));
        }
        self.radio.geometry(self.d_tr_range[0], self.d_st_range[0]).validate()?;
        Ok(())
    }
}

/// Observation handed to the agent at the start of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub prev_action: Action,
    pub prev_channel: ChannelState,
    pub prev_protected: bool,
    /// BS to D2D-Tx distance, meters.
    pub d_dt: f64,
    /// D2D-Tx to D2D-Rx distance, meters.
    pub d_tr: f64,
}

impl EnvState {
    /// Bit-exact identity of the state, usable as a map key.
    pub fn key(&self) -> StateKey {
        StateKey {
            discrete: [
                self.prev_action.index() as u8,
                self.prev_channel.index() as u8,
                self.prev_protected as u8,
            ],
            d_dt: self.d_dt.to_bits(),
            d_tr: self.d_tr.to_bits(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    discrete: [u8; 3],
    d_dt: u64,
    d_tr: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EnvState,
    pub action: Action,
    /// Raw reward: a rate in bits/second, zero, or the collision penalty.
    pub reward: f64,
    pub next_state: EnvState,
}

/// Result of one slot, including the hidden CU draws so that oracles can
/// check the reward independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub cu_active: bool,
    pub protected: bool,
}

/// Active and backscatter rates of one geometry, bits/second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRates {
    pub d2d: f64,
    pub backscatter: f64,
}

impl LinkRates {
    pub fn for_state(config: &EnvConfig, state: &EnvState) -> Result<LinkRates> {
        let geom = config.radio.geometry(state.d_tr, state.d_dt);
        Ok(LinkRates {
            d2d: channel::d2d_rate(&geom)?,
            backscatter: channel::backscatter_rate(&geom)?,
        })
    }
}

/// Draw distances for a new episode and clear the history features.
pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> EnvState {
    let d_dt = Uniform::new_inclusive(config.d_st_range[0], config.d_st_range[1]).sample(rng);
    let d_tr = Uniform::new_inclusive(config.d_tr_range[0], config.d_tr_range[1]).sample(rng);
    EnvState {
        prev_action: Action::Idle,
        prev_channel: ChannelState::Idle,
        prev_protected: false,
        d_dt,
        d_tr,
    }
}

/// Reward for an action given the slot's CU draws.
pub fn slot_reward(config: &EnvConfig, rates: LinkRates, action: Action, cu_active: bool, protected: bool) -> f64 {
    match action {
        Action::Idle => 0.0,
        Action::Active if !cu_active || protected => rates.d2d,
        Action::Active => config.penalty,
        Action::Backscatter if config.backscatter_needs_cu && !cu_active => 0.0,
        Action::Backscatter => rates.backscatter,
    }
}

fn step_with_rates<R: Rng + ?Sized>(
    state: &EnvState,
    action: Action,
    config: &EnvConfig,
    rates: LinkRates,
    rng: &mut R,
) -> StepOutcome {
    let u_cu: f64 = rng.gen();
    let u_protected: f64 = rng.gen();
    let cu_active = u_cu < config.p_access;
    let protected = cu_active && u_protected < config.p_protected;
    let reward = slot_reward(config, rates, action, cu_active, protected);
    StepOutcome {
        next: EnvState {
            prev_action: action,
            prev_channel: ChannelState::observe(cu_active, action),
            prev_protected: protected,
            ..*state
        },
        reward,
        cu_active,
        protected,
    }
}

/// Advance one slot from `state`.
pub fn step<R: Rng + ?Sized>(state: &EnvState, action: Action, config: &EnvConfig, rng: &mut R) -> Result<StepOutcome> {
    let rates = LinkRates::for_state(config, state)?;
    Ok(step_with_rates(state, action, config, rates, rng))
}

/// Zero for collisions, the achieved rate otherwise.
pub fn throughput(reward: f64) -> f64 {
    reward.max(0.0)
}

/// Mean achieved throughput over a reward stream; collision slots count as zero.
pub fn average_throughput(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Empty("reward sequence"));
    }
    Ok(rewards.iter().map(|&r| throughput(r)).sum::<f64>() / rewards.len() as f64)
}

/// Map a raw reward onto the learning axis: rates are divided by
/// `rate_unit` (1e6 gives Mbps) while the penalty is kept as is.
pub fn learning_reward(raw: f64, rate_unit: f64) -> f64 {
    if raw < 0.0 {
        raw
    } else {
        raw / rate_unit
    }
}

/// Environment instance owning its RNG and the current episode.
#[derive(Debug, Clone)]
pub struct SpectrumEnv {
    config: EnvConfig,
    rng: ChaCha8Rng,
    state: EnvState,
    rates: LinkRates,
    slot: usize,
    episodes: u64,
}

impl SpectrumEnv {
    pub fn new(config: EnvConfig) -> Result<SpectrumEnv> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let state = reset(&config, &mut rng);
        let rates = LinkRates::for_state(&config, &state)?;
        Ok(SpectrumEnv { config, rng, state, rates, slot: 0, episodes: 1 })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn rates(&self) -> LinkRates {
        self.rates
    }

    /// Slots taken in the current episode.
    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn episode_done(&self) -> bool {
        self.slot >= self.config.horizon
    }

    pub fn reset(&mut self) -> EnvState {
        self.state = reset(&self.config, &mut self.rng);
        // validated at construction and distances stay inside the ranges
        self.rates = LinkRates::for_state(&self.config, &self.state).expect("geometry validated");
        self.slot = 0;
        self.episodes += 1;
        self.state
    }

    pub fn step(&mut self, action: Action) -> StepOutcome {
        let out = step_with_rates(&self.state, action, &self.config, self.rates, &mut self.rng);
        self.state = out.next;
        self.slot += 1;
        out
    }

    /// Step and package the result as a transition.
    pub fn transition(&mut self, action: Action) -> (Transition, StepOutcome) {
        let state = self.state;
        let out = self.step(action);
        (Transition { state, action, reward: out.reward, next_state: out.next }, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn reset_is_deterministic_and_in_range() {
        let c = cfg();
        let a = reset(&c, &mut ChaCha8Rng::seed_from_u64(7));
        let b = reset(&c, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = reset(&c, &mut rng);
            assert!((100.0..=1000.0).contains(&s.d_dt));
            assert!((10.0..=100.0).contains(&s.d_tr));
            assert_eq!(s.prev_action, Action::Idle);
            assert_eq!(s.prev_channel, ChannelState::Idle);
            assert!(!s.prev_protected);
        }
    }

    #[test]
    fn idle_earns_nothing() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = reset(&c, &mut rng);
        for _ in 0..200 {
            assert_eq!(step(&s, Action::Idle, &c, &mut rng).unwrap().reward, 0.0);
        }
    }

    #[test]
    fn collision_penalty() {
        let c = cfg();
        let rates = LinkRates { d2d: 5e6, backscatter: 1e6 };
        assert_eq!(slot_reward(&c, rates, Action::Active, true, false), -100.0);
        assert_eq!(slot_reward(&c, rates, Action::Active, true, true), 5e6);
        assert_eq!(slot_reward(&c, rates, Action::Active, false, false), 5e6);
    }

    #[test]
    fn backscatter_reward_is_backscatter_rate() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = reset(&c, &mut rng);
        let cb = channel::backscatter_rate(&c.radio.geometry(s.d_tr, s.d_dt)).unwrap();
        let mut seen = 0;
        for _ in 0..200 {
            let out = step(&s, Action::Backscatter, &c, &mut rng).unwrap();
            if out.cu_active {
                assert_eq!(out.reward, cb);
                seen += 1;
            } else {
                assert_eq!(out.reward, 0.0);
            }
        }
        assert!(seen > 0);

        let literal = EnvConfig { backscatter_needs_cu: false, ..cfg() };
        for _ in 0..200 {
            assert_eq!(step(&s, Action::Backscatter, &literal, &mut rng).unwrap().reward, cb);
        }
    }

    #[test]
    fn reward_set_is_exhaustive() {
        for needs_cu in [false, true] {
            let c = EnvConfig { backscatter_needs_cu: needs_cu, ..cfg() };
            let rates = LinkRates { d2d: 3.0e6, backscatter: 7.0e6 };
            let allowed = [0.0, c.penalty, rates.d2d, rates.backscatter];
            for a in Action::ALL {
                for cu in [false, true] {
                    for prot in [false, true] {
                        let r = slot_reward(&c, rates, a, cu, prot && cu);
                        assert!(allowed.contains(&r));
                    }
                }
            }
        }
    }

    #[test]
    fn channel_flag_consistent() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = reset(&c, &mut rng);
        for i in 0..3000 {
            let a = Action::ALL[i % 3];
            let out = step(&s, a, &c, &mut rng).unwrap();
            let ch = out.next.prev_channel;
            assert_eq!(ch == ChannelState::Idle, !out.cu_active && a == Action::Idle);
            assert_eq!(matches!(ch, ChannelState::D2dOnly | ChannelState::Both), a != Action::Idle);
            assert_eq!(out.next.prev_action, a);
            assert_eq!((out.next.d_dt, out.next.d_tr), (s.d_dt, s.d_tr));
            if !out.cu_active {
                assert!(!out.next.prev_protected);
            }
        }
    }

    #[test]
    fn invalid_action_index() {
        assert!(matches!(Action::from_index(3), Err(Error::InvalidAction(3))));
        for a in Action::ALL {
            assert_eq!(Action::from_index(a.index()).unwrap(), a);
        }
    }

    #[test]
    fn average_throughput_cases() {
        assert!(average_throughput(&[]).is_err());
        assert_eq!(average_throughput(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(average_throughput(&[4e6, -100.0]).unwrap(), 2e6);
        assert_eq!(average_throughput(&[3e6; 7]).unwrap(), 3e6);
    }

    #[test]
    fn env_trajectory_reproducible() {
        let run = || {
            let mut env = SpectrumEnv::new(EnvConfig { seed: 42, ..cfg() }).unwrap();
            let mut out = Vec::new();
            for i in 0..500 {
                if env.episode_done() {
                    env.reset();
                }
                out.push(env.step(Action::ALL[i % 3]).reward.to_bits());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn distances_constant_within_episode() {
        let mut env = SpectrumEnv::new(EnvConfig { horizon: 50, ..cfg() }).unwrap();
        let start = *env.state();
        while !env.episode_done() {
            let out = env.step(Action::Backscatter);
            assert_eq!((out.next.d_dt, out.next.d_tr), (start.d_dt, start.d_tr));
        }
        let next = env.reset();
        assert_ne!((next.d_dt, next.d_tr), (start.d_dt, start.d_tr));
    }

    #[test]
    fn config_validation() {
        assert!(EnvConfig { p_access: 1.2, ..cfg() }.validate().is_err());
        assert!(EnvConfig { d_tr_range: [0.0, 10.0], ..cfg() }.validate().is_err());
        assert!(EnvConfig { d_st_range: [500.0, 100.0], ..cfg() }.validate().is_err());
        assert!(EnvConfig { horizon: 0, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn learning_axis() {
        assert_eq!(learning_reward(-100.0, 1e6), -100.0);
        assert_eq!(learning_reward(2.5e6, 1e6), 2.5);
    }
}
