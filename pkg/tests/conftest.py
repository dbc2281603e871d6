import numpy as np
import pytest

from bbr.study_data import Conclusion, GroundTruth, Response, StudyDataset


def dataset_from_matrix(incon, truth=GroundTruth.SAME_SOURCE, mask=None):
    """Study from an examiner x item matrix of inconclusive indicators."""
    incon = np.asarray(incon)
    mask = np.ones(incon.shape, dtype=bool) if mask is None else np.asarray(mask)
    conclusive = Conclusion.IDENTIFICATION if truth is GroundTruth.SAME_SOURCE else Conclusion.EXCLUSION
    responses = []
    for i in range(incon.shape[0]):
        for j in range(incon.shape[1]):
            if not mask[i, j]:
                continue
            cat = Conclusion.INCONCLUSIVE if incon[i, j] else conclusive
            responses.append(Response(
                examiner_id=f"E{i + 1}", item_id=f"I{j + 1}", ground_truth=truth,
                raw_conclusion=cat.value, canonical=cat, sequence=len(responses),
            ))
    return StudyDataset.from_responses(responses)


@pytest.fixture
def case_one():
    # two of eight examiners answer everything inconclusive
    m = np.zeros((8, 4), dtype=int)
    m[:2] = 1
    return dataset_from_matrix(m)


@pytest.fixture
def case_two():
    # one of four items is inconclusive for every examiner
    m = np.zeros((8, 4), dtype=int)
    m[:, 0] = 1
    return dataset_from_matrix(m)


@pytest.fixture
def write_study(tmp_path):
    def _write(rows, header="examiner,item,ground_truth,conclusion", name="study.csv"):
        path = tmp_path / name
        lines = [header] + [",".join(map(str, r)) for r in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path
    return _write


# -- acceptance reporting ---------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def acceptance(request):
    """Record one status line per acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(number, title, status, detail):
        if not isinstance(status, str):
            status = "PASS" if status else "FAIL"
        line = f"criterion {number:>2} {status:<4} {title}: {detail}"
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
