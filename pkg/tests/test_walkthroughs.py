import runpy
from pathlib import Path

import pytest

SCRIPTS = Path(__file__).resolve().parent.parent / "walkthroughs"


@pytest.mark.parametrize("name", ["01_encoder_and_search.py", "02_losses_and_margin.py"])
def test_walkthrough_runs(name, capsys):
    runpy.run_path(str(SCRIPTS / name), run_name="__main__")
    assert capsys.readouterr().out
