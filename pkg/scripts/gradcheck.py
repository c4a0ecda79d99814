"""Print the finite-difference gradient report of the tiny instance for both
mixing modes, with and without the shifted kernel."""
import torch

from agcnet.config import RunConfig
from agcnet.runner import tiny_gradcheck


def main():
    torch.set_num_threads(1)
    ok = True
    for mode in ("attention", "weighted"):
        for shift in (True, False):
            report = tiny_gradcheck(RunConfig(mode=mode, shift=shift))
            print(f"== mode={mode} shift={shift}")
            print(report.to_text())
            ok &= report.passed
    raise SystemExit(0 if ok else 1)


if __name__ == "__main__":
    main()
