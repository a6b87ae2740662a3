import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from schedlab.encoding import (NONPREEMPTIVE_HOMO, PREEMPTIVE_HETERO, PREEMPTIVE_HOMO, InvalidAction,
                               action_index, action_vector, encode_state, intermediate_state, is_forced,
                               mode_of)
from schedlab.model import JobLists, Platform, TaskSpec, make_job


def ran_one_slot(job, slot, units=2):
    job.done_units += units
    job.allocated[0] += units
    job.work_log.append((slot, units))
    return job


def example_job():
    # D = 10, E = 3, ran one full slot at t = 3, still running at t = 4
    return ran_one_slot(make_job(TaskSpec(0, 10, 3), 0, 0), 3)


class TestEncode:
    def test_row_fast_view(self):
        s = encode_state(JobLists([], [example_job()]), 4, 1, PREEMPTIVE_HOMO, n_hist=2, capacity=4)
        assert s.tensor[0, :, 0].tolist() == [6, 2, 1]

    def test_row_slow_view(self):
        s = encode_state(JobLists([], [example_job()]), 4, (0, 1), PREEMPTIVE_HETERO, n_hist=2, capacity=4)
        assert s.tensor[0, :, 0].tolist() == [6, 4, 1]

    def test_history_slices(self):
        s = encode_state(JobLists([], [example_job()]), 4, 1, PREEMPTIVE_HOMO, n_hist=4, capacity=2)
        # t=3: before the slot it ran in; t=2: idle before that
        assert s.tensor[0, :, 1].tolist() == [7, 3, 0]
        assert s.tensor[0, :, 2].tolist() == [8, 3, 0]
        assert s.tensor[0, :, 3].tolist() == [9, 3, 0]

    def test_history_zero_before_release(self):
        job = make_job(TaskSpec(0, 10, 3), 0, 3)
        s = encode_state(JobLists([job], []), 4, 1, PREEMPTIVE_HOMO, n_hist=4, capacity=2)
        assert s.tensor[0, 0, :].tolist() == [9, 10, 0, 0]
        assert not s.tensor[0, :, 2:].any()

    def test_empty_padding(self):
        s = encode_state(JobLists([], []), 0, 2, PREEMPTIVE_HOMO, n_hist=4, capacity=8)
        assert s.tensor.shape == (8, 3, 4) and not s.tensor.any()
        assert not s.mask.any() and s.done

    def test_nonpreemptive_uses_waiting_only(self):
        w = make_job(TaskSpec(1, 20, 2), 0, 0)
        s = encode_state(JobLists([w], [example_job()]), 4, 1, NONPREEMPTIVE_HOMO, capacity=4)
        assert s.row_to_job == (w,) and s.mask.sum() == 1

    def test_rows_sorted_by_deadline_then_task(self):
        jobs = [make_job(TaskSpec(i, p, 1), 0, 0) for i, p in [(3, 8), (1, 5), (0, 8), (2, 12)]]
        s = encode_state(JobLists(jobs, []), 0, 1, PREEMPTIVE_HOMO, capacity=8)
        assert [j.task_id for j in s.row_to_job] == [1, 0, 3, 2]

    def test_pure_function(self):
        lists = JobLists([make_job(TaskSpec(1, 20, 2), 0, 0)], [example_job()])
        a = encode_state(lists, 4, 2, PREEMPTIVE_HOMO)
        b = encode_state(lists, 4, 2, PREEMPTIVE_HOMO)
        assert np.array_equal(a.tensor, b.tensor) and np.array_equal(a.mask, b.mask)

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            encode_state(JobLists([], []), 0, 1, PREEMPTIVE_HOMO, capacity=0)


class TestIntermediate:
    def three_jobs(self, idle=2, mode=PREEMPTIVE_HOMO):
        jobs = [make_job(TaskSpec(i, 10 + i, 2), 0, 0) for i in range(3)]
        return encode_state(JobLists(jobs, []), 0, idle, mode, capacity=4)

    def test_select_row_zero(self):
        s = self.three_jobs()
        n = intermediate_state(s, action_vector(0, 4))
        assert n.mask.sum() == 2 and n.idle == 1
        assert s.row_to_job[0] not in n.row_to_job

    def test_last_job_ends_decisions(self):
        jobs = [make_job(TaskSpec(0, 10, 2), 0, 0)]
        s = encode_state(JobLists(jobs, []), 0, 2, PREEMPTIVE_HOMO, capacity=4)
        n = intermediate_state(s, 0)
        assert n.mask.sum() == 0 and n.done

    def test_at_most_m_actions(self):
        jobs = [make_job(TaskSpec(i, 10 + i, 2), 0, 0) for i in range(5)]
        s = encode_state(JobLists(jobs, []), 0, 2, PREEMPTIVE_HOMO, capacity=8)
        s1 = intermediate_state(s, 0)
        s2 = intermediate_state(s1, 0)
        assert not s1.done and s2.done
        with pytest.raises(InvalidAction):
            intermediate_state(s2, 0)

    def test_padding_row_rejected(self):
        with pytest.raises(InvalidAction):
            intermediate_state(self.three_jobs(), 3)

    def test_action_vector_one_hot(self):
        assert action_vector(2, 5).tolist() == [0, 0, 1, 0, 0]
        assert action_index(action_vector(2, 5)) == 2
        with pytest.raises(InvalidAction):
            action_index(np.array([1, 1, 0]))

    def test_hetero_switches_view_after_fast_processors(self):
        job = ran_one_slot(make_job(TaskSpec(5, 30, 4), 0, 0), 0)
        others = [make_job(TaskSpec(i, 10, 2), 0, 1) for i in range(2)]
        s = encode_state(JobLists(others + [job], []), 1, (1, 2), PREEMPTIVE_HETERO, n_hist=1, capacity=4)
        assert s.tensor[2, 1, 0] == 3          # fast view: 3 slots left
        n = intermediate_state(s, 0)
        assert (n.idle_fast, n.idle_slow) == (0, 2)
        assert n.tensor[1, 1, 0] == 6          # slow view doubles it

    def test_forced_choice(self):
        assert is_forced(2, 2, 0)
        assert not is_forced(3, 2, 0)
        assert is_forced(1, 1, 2)              # fills the single fast processor
        assert not is_forced(2, 1, 2)          # which job goes to the fast one matters
        assert is_forced(4, 0, 0)              # nowhere to run anything


def test_mode_of():
    assert mode_of(Platform.homogeneous(2)) == "preemptive-homo"
    assert mode_of(Platform.heterogeneous(2, preemptive=False)) == "nonpreemptive-hetero"


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 60), st.integers(0, 3)), min_size=0, max_size=40),
       st.integers(1, 16), st.integers(0, 5))
def test_truncation_keeps_earliest_deadlines(spec, capacity, t):
    jobs = []
    seen = {}
    for period, release in spec:
        tid = len(seen) % 7
        idx = seen.get(tid, 0)
        seen[tid] = idx + 1
        jobs.append(make_job(TaskSpec(tid, period + 5, 1), idx, release))
    s = encode_state(JobLists(jobs, []), max(t, 3), 1, PREEMPTIVE_HOMO, capacity=capacity)
    brute = sorted(jobs, key=lambda j: (j.abs_deadline, j.task_id, j.index))[:capacity]
    assert list(s.row_to_job) == brute
    assert s.mask.sum() == len(brute)
    assert not s.tensor[len(brute):].any()


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.booleans(), st.integers(0, 2**16))
def test_actions_never_repeat_a_job(n_jobs, m, preemptive, seed):
    rng = np.random.default_rng(seed)
    jobs = [make_job(TaskSpec(i, int(rng.integers(5, 40)), 1), 0, 0) for i in range(n_jobs)]
    mode = PREEMPTIVE_HOMO if preemptive else NONPREEMPTIVE_HOMO
    s = encode_state(JobLists(jobs, []), 0, m, mode, capacity=8)
    picked = []
    while not s.done:
        idx = int(rng.choice(np.flatnonzero(s.mask)))
        picked.append(s.row_to_job[idx])
        s = intermediate_state(s, idx)
    assert len(picked) == len(set(map(id, picked))) == min(m, n_jobs)
