//! The transmission model: a daily-stepped Ross-Macdonald-style system with
//! intervention-adjusted rates.
//!
//! Interventions act on two rates. Bednets cut the biting rate,
//! `a_eff = a * (1 - kappa_bite * itn)`, and both interventions raise
//! mosquito mortality, `g_eff = g * (1 + kappa_kill_itn * itn +
//! kappa_kill_irs * irs)`. From those:
//!
//! ```text
//! r0 = m * a_eff^2 * b * c * exp(-g_eff * n_eip) / (r * g_eff)
//! x* = max(0, (r0 - 1) / (r0 + a_eff * c / g_eff))
//! ```
//!
//! `x*` is the endemic equilibrium prevalence of the continuous-rate
//! dynamics. Each simulated day, with prevalence `x = infected/population`:
//!
//! ```text
//! s      = (a_eff * c * x / (g_eff + a_eff * c * x)) * exp(-g_eff * n_eip)
//! lambda = b * m * a_eff * s
//! p_inf  = 1 - exp(-lambda)        p_rec = 1 - exp(-r)
//! ```
//!
//! Stochastic mode draws `Binomial(susceptible, p_inf)` new infections then
//! `Binomial(infected, p_rec)` recoveries — exactly two binomial variates
//! per day. Expectation mode advances by the two means and never touches
//! the RNG. The mosquito side is a quasi-equilibrium: the sporozoite rate
//! is an algebraic function of current human prevalence, leaving a single
//! state variable with a closed-form equilibrium.
//!
//! Runs start at the *zero-policy* equilibrium regardless of the document's
//! policy — interventions switch on at day 0 against an endemic baseline —
//! with `infected = round(x* * population)`.

use libm::{exp, expm1, floor};

use crate::policy::Policy;
use crate::rng::SplitMix64;
use crate::scenario::{EpiParameters, InterventionEffects, Mode, ScenarioDocument};

/// Intervention-adjusted rates for one (epi, effects, policy) combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRates {
    pub a_eff: f64,
    pub g_eff: f64,
    pub r0: f64,
}

pub fn effective_rates(epi: &EpiParameters, effects: &InterventionEffects, policy: &Policy) -> EffectiveRates {
    let itn = policy.itn_coverage.value();
    let irs = policy.irs_coverage.value();
    let a_eff = epi.a * (1.0 - effects.kappa_bite * itn);
    let g_eff = epi.g * (1.0 + effects.kappa_kill_itn * itn + effects.kappa_kill_irs * irs);
    let r0 = epi.m * a_eff * a_eff * epi.b * epi.c * exp(-g_eff * epi.n_eip) / (epi.r * g_eff);
    EffectiveRates { a_eff, g_eff, r0 }
}

/// Endemic equilibrium prevalence; 0 when `r0 <= 1`.
pub fn equilibrium_prevalence(rates: &EffectiveRates, epi: &EpiParameters) -> f64 {
    if rates.r0 <= 1.0 {
        return 0.0;
    }
    (rates.r0 - 1.0) / (rates.r0 + rates.a_eff * epi.c / rates.g_eff)
}

/// One day of simulation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub day: u32,
    /// Currently infected humans; integral in stochastic mode.
    pub infected: f64,
    /// New infections accumulated since day 0.
    pub cumulative_cases: f64,
}

/// Outputs of a full run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutput {
    pub total_cases: f64,
    pub final_prevalence: f64,
}

/// Per-day constants hoisted out of the daily loop.
struct DayRates {
    a_eff: f64,
    g_eff: f64,
    c: f64,
    /// exp(-g_eff * n_eip): sporozoite survival through incubation.
    incubation_survival: f64,
    /// b * m * a_eff: multiplies the sporozoite rate into lambda.
    foi_coefficient: f64,
    p_rec: f64,
    population: f64,
}

impl DayRates {
    fn new(rates: &EffectiveRates, epi: &EpiParameters) -> DayRates {
        DayRates {
            a_eff: rates.a_eff,
            g_eff: rates.g_eff,
            c: epi.c,
            incubation_survival: exp(-rates.g_eff * epi.n_eip),
            foi_coefficient: epi.b * epi.m * rates.a_eff,
            p_rec: -expm1(-epi.r),
            population: epi.population as f64,
        }
    }

    fn advance(&self, state: &SimState, mode: Mode, rng: &mut SplitMix64) -> SimState {
        let x = state.infected / self.population;
        let acx = self.a_eff * self.c * x;
        let s = acx / (self.g_eff + acx) * self.incubation_survival;
        let lambda = self.foi_coefficient * s;
        let p_inf = -expm1(-lambda);
        let susceptible = self.population - state.infected;
        let (new_infections, recoveries) = match mode {
            Mode::Stochastic => (
                rng.binomial(susceptible as u64, p_inf) as f64,
                rng.binomial(state.infected as u64, self.p_rec) as f64,
            ),
            Mode::Expectation => (susceptible * p_inf, state.infected * self.p_rec),
        };
        let infected = (state.infected + new_infections - recoveries).clamp(0.0, self.population);
        SimState {
            day: state.day + 1,
            infected,
            cumulative_cases: state.cumulative_cases + new_infections,
        }
    }
}

/// Advances one day. Stochastic mode consumes exactly two binomial draws
/// from `rng`; expectation mode leaves it untouched.
pub fn step(
    state: &SimState,
    rates: &EffectiveRates,
    epi: &EpiParameters,
    mode: Mode,
    rng: &mut SplitMix64,
) -> SimState {
    DayRates::new(rates, epi).advance(state, mode, rng)
}

/// Runs a scenario end to end from its seed. Equal documents (seed
/// included) produce equal outputs on every platform.
pub fn simulate(doc: &ScenarioDocument) -> SimOutput {
    let baseline = effective_rates(&doc.epi, &doc.effects, &Policy::ZERO);
    let x0 = equilibrium_prevalence(&baseline, &doc.epi);
    let population = doc.epi.population as f64;
    let infected = floor(x0 * population + 0.5);

    let rates = effective_rates(&doc.epi, &doc.effects, &doc.policy);
    let day_rates = DayRates::new(&rates, &doc.epi);
    let mut rng = SplitMix64::new(doc.seed);
    let mut state = SimState {
        day: 0,
        infected,
        cumulative_cases: 0.0,
    };
    for _ in 0..doc.horizon_days {
        state = day_rates.advance(&state, doc.mode, &mut rng);
    }
    SimOutput {
        total_cases: state.cumulative_cases,
        final_prevalence: state.infected / population,
    }
}
