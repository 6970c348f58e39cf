import numpy as np
import pytest

from marlcredit.core import (
    CreditMatrix,
    CreditSource,
    EnvKind,
    EnvSpec,
    EpisodeBatch,
    TaskAssignmentMatrix,
    TimeStep,
    Trajectory,
    episode_return,
    per_agent_surrogate_return,
    shared_credit_matrix,
    validate_credit_matrix,
)
from marlcredit.exceptions import DomainError, ShapeError, UsageError


class TestEnvSpec(object):

    def test_kind_coerced(self):
        spec = EnvSpec(2, 16, 6, 52, "spaceworld")
        assert spec.env_kind is EnvKind.SPACEWORLD

    @pytest.mark.parametrize("fields", [
        (0, 1, 3, 25),
        (2, 0, 3, 25),
        (2, 1, 1, 25),
        (2, 1, 3, 0),
    ])
    def test_invalid(self, fields):
        with pytest.raises(DomainError):
            EnvSpec(*fields, env_kind=EnvKind.MATRIX)


class TestTimeStep(object):

    def test_arrays_frozen(self):
        step = TimeStep([[1.0], [2.0]], (0, 1), 3)
        assert step.global_reward == 3.0
        assert step.joint_action == (0, 1)
        with pytest.raises(ValueError):
            step.joint_obs[0, 0] = 5.0

    def test_agent_count_mismatch(self):
        with pytest.raises(ShapeError):
            TimeStep([[1.0], [2.0]], (0,), 0.0)

    def test_negative_action(self):
        with pytest.raises(DomainError):
            TimeStep([[1.0]], (-1,), 0.0)


class TestTrajectory(object):

    def test_step_after_done(self):
        done = TimeStep([[0.0]], (0,), 1.0, done=True)
        with pytest.raises(UsageError):
            Trajectory((done, done), 0, EnvKind.MATRIX)

    def test_over_limit(self):
        steps = [TimeStep([[0.0]], (0,), 0.0) for _ in range(3)]
        with pytest.raises(DomainError):
            Trajectory(steps, 0, EnvKind.MATRIX, max_episode_steps=2)

    def test_next_obs(self, trajectory_factory):
        traj = trajectory_factory([0.0, 1.0, 2.0])
        assert traj.next_obs(0)[0, 0] == 1.0
        assert traj.next_obs(2)[0, 0] == 3.0

    def test_next_obs_without_final(self):
        traj = Trajectory([TimeStep([[0.0]], (0,), 0.0)], 0, EnvKind.MATRIX)
        with pytest.raises(UsageError):
            traj.next_obs(0)

    def test_equality(self, trajectory_factory):
        assert trajectory_factory([1.0, 2.0]) == trajectory_factory([1.0, 2.0])
        assert trajectory_factory([1.0, 2.0]) != trajectory_factory([1.0, 3.0])

    def test_actions(self, trajectory_factory):
        traj = trajectory_factory([0.0, 0.0], actions=[(1, 2), (0, 1)])
        assert traj.actions.tolist() == [[1, 2], [0, 1]]


class TestEpisodeBatch(object):

    def test_mixed_agents(self, trajectory_factory):
        with pytest.raises(ShapeError):
            EpisodeBatch((trajectory_factory([0.0], num_agents=2),
                          trajectory_factory([0.0], num_agents=3)))

    def test_mixed_kinds(self, trajectory_factory):
        with pytest.raises(ShapeError):
            EpisodeBatch((
                trajectory_factory([0.0]),
                trajectory_factory([0.0], env_kind=EnvKind.FORAGING)))

    def test_totals(self, matrix_batch):
        assert len(matrix_batch) == 2
        assert matrix_batch.total_steps == 3
        assert matrix_batch.num_agents == 2
        assert matrix_batch.env_kind is EnvKind.MATRIX


class TestEpisodeReturn(object):

    @pytest.mark.parametrize(("rewards", "expected"), [
        ([0.0] * 24 + [10.0], 10.0),
        ([11.0] * 25, 275.0),
        ([0.1, 0.2, 0.3], 0.6),
    ])
    def test_sum(self, trajectory_factory, rewards, expected):
        assert episode_return(trajectory_factory(rewards)) == expected

    def test_empty(self):
        with pytest.raises(DomainError):
            episode_return(Trajectory((), 0, EnvKind.MATRIX))


class TestSurrogateReturn(object):

    def test_row_sums(self, trajectory_factory):
        traj = trajectory_factory([1.0, 0.0, 2.0])
        credits = CreditMatrix([[1.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
        assert per_agent_surrogate_return(traj, credits).tolist() == \
            [1.0, 2.0]

    def test_shared_reduces_to_return(self, trajectory_factory):
        traj = trajectory_factory([1.0, -2.0, 4.0], num_agents=3)
        result = per_agent_surrogate_return(traj, shared_credit_matrix(traj))
        assert result.tolist() == [3.0, 3.0, 3.0]

    def test_length_mismatch(self, trajectory_factory):
        traj = trajectory_factory([1.0, 0.0, 2.0])
        with pytest.raises(ShapeError):
            per_agent_surrogate_return(traj, CreditMatrix(np.zeros((2, 2))))


class TestValidateCreditMatrix(object):

    def test_valid(self, matrix_batch):
        credits = [shared_credit_matrix(t) for t in matrix_batch]
        assert validate_credit_matrix(credits, matrix_batch) == []

    def test_nan(self, matrix_batch):
        credits = [CreditMatrix([[0.0, np.nan], [0.0, 0.0]]),
                   shared_credit_matrix(matrix_batch.trajectories[1])]
        assert validate_credit_matrix(credits, matrix_batch) == \
            ["non-finite at (0,1)"]

    def test_agent_count(self, matrix_batch):
        credits = [CreditMatrix(np.zeros((3, 2))),
                   shared_credit_matrix(matrix_batch.trajectories[1])]
        assert validate_credit_matrix(credits, matrix_batch) == \
            ["wrong agent count in episode 1: expected 2 got 3"]

    def test_length(self, matrix_batch):
        credits = [CreditMatrix(np.zeros((2, 5))),
                   shared_credit_matrix(matrix_batch.trajectories[1])]
        violations = validate_credit_matrix(credits, matrix_batch)
        assert violations == ["length mismatch in episode 1: expected 2 "
                              "got 5"]

    def test_trajectory_count(self, matrix_batch):
        violations = validate_credit_matrix(
            shared_credit_matrix(matrix_batch.trajectories[0]), matrix_batch)
        assert violations[0].startswith("trajectory count mismatch")


class TestTaskAssignmentMatrix(object):

    def test_width(self):
        with pytest.raises(ShapeError):
            TaskAssignmentMatrix((((1, 2),),), d_task=3)

    def test_forward_fill(self):
        tasks = TaskAssignmentMatrix(
            ((None, (1, 2), None, (3, 4)), (None, None, None, None)), 2)
        filled = tasks.forward_filled()
        assert filled[0].tolist() == [[0, 0], [1, 2], [1, 2], [3, 4]]
        assert not filled[1].any()
        assert tasks.present_count() == 2

    def test_forward_fill_initial(self):
        tasks = TaskAssignmentMatrix.absent(1, 2, 2)
        assert tasks.forward_filled([(5, 6)])[0].tolist() == [[5, 6], [5, 6]]

    def test_split(self):
        tasks = TaskAssignmentMatrix((((1,), None, (2,)),), 1)
        first, second = tasks.split([2, 1])
        assert first.entries == (((1,), None),)
        assert second.entries == (((2,),),)

    def test_split_bad_lengths(self):
        with pytest.raises(ShapeError):
            TaskAssignmentMatrix.absent(1, 3, 1).split([1, 1])


def test_credit_matrix_equality():
    a = CreditMatrix([[1.0, 2.0]], CreditSource.ORACLE)
    assert a == CreditMatrix(np.array([[1.0, 2.0]]), "oracle")
    assert a != CreditMatrix([[1.0, 2.0]], CreditSource.SHARED)
