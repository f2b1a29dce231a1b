"""Regenerate src/vlcsim/data/default_card.json from the anchor points."""

from pathlib import Path

from vlcsim.calibration import write_default_card

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "vlcsim" / "data" / "default_card.json"
    card = write_default_card(out)
    print(f"wrote {out}")
    for name, value in card.fit_residuals.items():
        print(f"  {name}: {value:.3e}")
