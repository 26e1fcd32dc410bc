"""Dynamic monopoly pricing with two product varieties over a state-transition
graph: static optima, no-trading-up benchmarks, and discretized dynamic
equilibrium price paths."""

from .model import (
    ConsumptionPath,
    Setting,
    SettingKind,
    State,
    TransitionGraph,
    TypeAtom,
    TypePopulation,
    canonical_setting,
    enumerate_paths,
    explicit_population,
    full_graph,
    horizon_weight,
    is_admissible,
    linear_band_population,
    single_atom_population,
    total_consumption,
    total_payment,
    total_value,
    uniform_grid_population,
)
from .static_game import (
    Allocation,
    Classification,
    PriceGridSpec,
    PriceProfile,
    SettingClass,
    StaticOptimum,
    TieBreak,
    TradingUpReport,
    classify_setting,
    demand_segments,
    detect_trading_up,
    leaves_no_trading_up,
    monopoly_price,
    no_trading_up_optimum,
    static_choice,
    static_profit,
)
from .dynamic import (
    BudgetExceededError,
    EquilibriumOutcome,
    solve_pbe,
    simulate_plan,
)
from .checks import (
    choice_preference_transfers,
    consumer_rationality_check,
    constant_price_exhausts,
    exhaustion_time,
    full_tradeup_threshold,
    path_preference_transfers,
    price_floor_check,
    profit_floor_check,
    revenue_decomposition_check,
    skimming_consistency,
    verify_monopoly_pbe,
)
from .oracle import (
    OracleInstance,
    StaticFamily,
    brute_force_pbe,
    closed_form_static_optimum,
    integrate_segments,
)
from .transitional import (
    ExtendedStaticGame,
    ReconstructedPrices,
    extended_static_game,
    reconstruct_prices,
    solve_extended,
    verify_transitional_equilibrium,
)

__all__ = [name for name in dir() if not name.startswith("_")]
