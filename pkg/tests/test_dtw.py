import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overfitguard.dtw import DtwMode, DtwParams, dtw_distance, dtw_exact, dtw_fast
from overfitguard.errors import InvalidInput

small_seqs = st.lists(
    st.floats(min_value=-100, max_value=100, allow_nan=False, allow_infinity=False),
    min_size=1,
    max_size=12,
)


def dtw_reference(a, b):
    """Independent full-DP oracle kept deliberately dumb: python lists, full
    matrix, no shortcuts."""
    n, m = len(a), len(b)
    big = float("inf")
    d = [[big] * (m + 1) for _ in range(n + 1)]
    d[0][0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = abs(a[i - 1] - b[j - 1])
            d[i][j] = cost + min(d[i - 1][j], d[i][j - 1], d[i - 1][j - 1])
    return d[n][m]


def walk(rng, n):
    return np.cumsum(rng.normal(size=n))


class TestExact:
    def test_identical_sequences(self):
        assert dtw_exact([1, 2, 3], [1, 2, 3]) == 0.0

    def test_hand_dp(self):
        assert dtw_exact([1, 2, 3], [2, 3, 4]) == 2.0

    def test_single_cell(self):
        assert dtw_exact([0], [5]) == 5.0

    def test_unequal_lengths(self):
        assert dtw_exact([1, 1, 1, 1], [1]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(InvalidInput):
            dtw_exact([], [1.0])

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            dtw_exact([np.nan], [1.0])

    def test_matches_reference_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            a = walk(rng, int(rng.integers(1, 20)))
            b = walk(rng, int(rng.integers(1, 20)))
            assert dtw_exact(a, b) == pytest.approx(dtw_reference(list(a), list(b)), abs=1e-12)

    def test_squared_cost_option(self):
        assert dtw_exact([0.0], [3.0], squared=True) == 9.0

    @given(small_seqs, small_seqs)
    @settings(max_examples=80, deadline=None)
    def test_symmetry(self, a, b):
        assert dtw_exact(a, b) == pytest.approx(dtw_exact(b, a), abs=1e-12)

    @given(small_seqs)
    @settings(max_examples=40, deadline=None)
    def test_self_distance_zero(self, a):
        assert dtw_exact(a, a) == 0.0

    @given(small_seqs, small_seqs)
    @settings(max_examples=80, deadline=None)
    def test_endpoint_lower_bound(self, a, b):
        # the (0,0) and (n-1,m-1) cells are on every path
        bound = max(abs(a[0] - b[0]), abs(a[-1] - b[-1]))
        assert dtw_exact(a, b) >= bound - 1e-12


class TestFast:
    def test_identical_sequences_any_radius(self):
        for r in (0, 1, 5):
            assert dtw_fast([1, 2, 3], [1, 2, 3], DtwParams(radius=r)) == 0.0

    def test_full_radius_equals_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n, m = int(rng.integers(3, 65)), int(rng.integers(3, 65))
            a, b = walk(rng, n), walk(rng, m)
            exact = dtw_exact(a, b)
            fast = dtw_fast(a, b, DtwParams(radius=max(n, m)))
            assert fast == pytest.approx(exact, abs=1e-9)

    def test_never_below_exact_and_small_error(self):
        rng = np.random.default_rng(3)
        rel_errors = []
        for _ in range(30):
            n, m = int(rng.integers(8, 65)), int(rng.integers(8, 65))
            a, b = walk(rng, n), walk(rng, m)
            exact = dtw_exact(a, b)
            fast = dtw_fast(a, b, DtwParams(radius=1))
            assert fast >= exact - 1e-9
            if exact > 1e-9:
                rel_errors.append((fast - exact) / exact)
        assert np.mean(rel_errors) <= 0.05

    def test_radius_zero_odd_lengths_still_reach_corner(self):
        rng = np.random.default_rng(4)
        a, b = walk(rng, 33), walk(rng, 47)
        assert np.isfinite(dtw_fast(a, b, DtwParams(radius=0)))

    def test_widening_radius_improves_on_average(self):
        # Strict per-pair (even per-corpus-mean) monotonicity in the radius
        # does not hold: a larger radius can re-route the coarse warp path
        # and land in a slightly worse refinement window. What does hold is
        # the squeeze between the structural bounds: cost(r) >= exact for
        # every r, cost(full) == exact, and widening the radius by a decent
        # margin shrinks the mean excess over exact.
        rng = np.random.default_rng(5)
        pairs = [
            (walk(rng, int(rng.integers(16, 80))), walk(rng, int(rng.integers(16, 80))))
            for _ in range(60)
        ]
        exact = np.array([dtw_exact(a, b) for a, b in pairs])
        excess = {}
        for radius in (0, 5, 25):
            costs = np.array([dtw_fast(a, b, DtwParams(radius=radius)) for a, b in pairs])
            assert np.all(costs >= exact - 1e-9)
            excess[radius] = np.mean(costs - exact)
        assert excess[5] < excess[0]
        assert excess[25] < excess[5]

    def test_dispatch(self):
        a, b = [1.0, 5.0, 2.0], [2.0, 4.0, 2.0]
        assert dtw_distance(a, b, DtwParams(mode=DtwMode.EXACT)) == dtw_exact(a, b)
        assert dtw_distance(a, b, DtwParams(mode=DtwMode.FAST, radius=10)) == dtw_fast(
            a, b, DtwParams(radius=10)
        )

    def test_negative_radius_rejected(self):
        with pytest.raises(InvalidInput):
            DtwParams(radius=-1)
