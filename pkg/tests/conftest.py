import numpy as np
import pytest

from overfitguard.history import LossCurve, OverfitLabel, TrainingHistory


@pytest.fixture(scope="session")
def oracle_corpus():
    """240 labelled synthetic curves shared by the slower suites."""
    from overfitguard.simulation import synthetic_corpus

    return synthetic_corpus(240, length=200, seed=42)


@pytest.fixture(scope="session")
def knn_cv(oracle_corpus):
    """Full default-grid CV on the oracle corpus, with its wall-clock time."""
    import time

    from overfitguard.classifiers import ClassifierKind, default_grid, grid_search_cv

    data = [(h.val_loss, label) for h, label in oracle_corpus]
    start = time.perf_counter()
    report = grid_search_cv(
        ClassifierKind.KNN_DTW, default_grid(ClassifierKind.KNN_DTW), data, seed=7
    )
    return {"report": report, "seconds": time.perf_counter() - start}


@pytest.fixture(scope="session")
def knn_model(oracle_corpus, knn_cv):
    from overfitguard.classifiers import ClassifierKind, fit

    data = [(h.val_loss, label) for h, label in oracle_corpus]
    return fit(ClassifierKind.KNN_DTW, knn_cv["report"].best_params, data)


def make_history(train, val, acc=None, hid="h"):
    epochs = np.arange(len(train), dtype=np.int64)
    return TrainingHistory(
        id=hid,
        train_loss=LossCurve(epochs, np.asarray(train, dtype=np.float64)),
        val_loss=LossCurve(epochs, np.asarray(val, dtype=np.float64)),
        val_accuracy=(
            LossCurve(epochs, np.asarray(acc, dtype=np.float64)) if acc is not None else None
        ),
    )


@pytest.fixture
def history_factory():
    return make_history


def label_of(value: bool) -> OverfitLabel:
    return OverfitLabel.OVERFIT if value else OverfitLabel.NON_OVERFIT
