import pytest

from extract_helpers import write_samples


@pytest.fixture
def sample_file(tmp_path):
    texts = {f"ihc-{i:06d}": f"sample text number {i} about something" for i in range(20)}
    return write_samples(tmp_path / "samples.jsonl", texts), texts
