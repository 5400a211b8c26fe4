"""Detect and prevent overfitting in deep-learning runs from their training
histories: time-series classifiers over validation-loss curves, correlation
baselines, early-stopping variants, an overfit simulator, and an evaluation
harness."""

from .history import (
    LossCurve,
    MetricSource,
    MonitoredSeries,
    OverfitLabel,
    TrainingHistory,
    monitored_series,
    moving_average,
    read_history_csv,
    resample_linear,
    write_history_csv,
    z_normalize,
)
from .dtw import DtwMode, DtwParams, dtw_exact, dtw_fast
from .classifiers import (
    ClassifierKind,
    CvReport,
    KnnDtwParams,
    Normalization,
    SaxVsmParams,
    TsfParams,
    default_grid,
    fit,
    grid_search_cv,
    load_model,
    predict,
    save_model,
)
from .detectors import (
    CorrelationKind,
    HeuristicThresholds,
    ThresholdModel,
    calibrate_threshold,
    correlation,
    detect,
    heuristic_grid_search,
    heuristic_label,
)
from .prevention import (
    MonitorSession,
    PreventionConfig,
    ReplayResult,
    StopAction,
    StopDecision,
    Strategy,
    observe,
    open_session,
    replay,
)
from .simulation import (
    ARCHITECTURES,
    MlpSpec,
    SyntheticCurveSpec,
    TabularDataset,
    Task,
    generate_synthetic,
    simulate_corpus,
    synthetic_corpus,
    train_mlp,
)
from .evaluation import (
    EvalReport,
    StrategySpec,
    cliffs_delta,
    evaluate_detection,
    evaluate_prevention,
    mann_whitney_u,
    prf,
)

__version__ = "0.1.0"
