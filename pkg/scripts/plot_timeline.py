#!/usr/bin/env python3
"""Plot a decision timeline next to its input and oscillator waveforms.

Takes the artifacts `roughsense simulate` writes and renders the classic
three-panel view: microphone signals, class probabilities with the contact
gate, and the generated feedback waveform. Needs matplotlib (not a package
dependency).
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from roughsense.dataset import read_wav


def load_decisions(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split("\t")
        for line in fh:
            rows.append(line.strip().split("\t"))
    cols = {name: i for i, name in enumerate(header)}
    t = np.array([float(r[cols["timestamp_s"]]) for r in rows])
    classes = [r[cols["class"]] for r in rows]
    probs = np.array(
        [[float(r[cols[k]]) for k in ("p_rough", "p_smooth", "p_nonvalid")] for r in rows]
    )
    dbfs = np.array([float(r[cols["piezo_dbfs"]]) for r in rows])
    return t, classes, probs, dbfs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--input", required=True, help="2-channel input WAV")
    ap.add_argument("--decisions", required=True, help="decision timeline TSV")
    ap.add_argument("--osc-wav", required=True, help="rendered oscillator WAV")
    ap.add_argument("--out", default="timeline.png")
    args = ap.parse_args()

    rate, mics = read_wav(args.input)
    osc_rate, osc = read_wav(args.osc_wav)
    t, classes, probs, dbfs = load_decisions(args.decisions)

    fig, axes = plt.subplots(3, 1, figsize=(10, 7), sharex=True)
    mic_t = np.arange(len(mics)) / rate
    axes[0].plot(mic_t, mics[:, 0], lw=0.3, label="piezo")
    axes[0].plot(mic_t, mics[:, 1], lw=0.3, label="MEMS", alpha=0.7)
    axes[0].set_ylabel("microphones")
    axes[0].legend(loc="upper right", fontsize=8)

    axes[1].plot(t, probs[:, 0], label="p(rough)")
    axes[1].plot(t, probs[:, 1], label="p(smooth)")
    contact = np.array([c != "no_contact" for c in classes], dtype=float)
    axes[1].fill_between(t, 0, contact, alpha=0.1, step="mid", label="contact")
    axes[1].set_ylabel("classifier")
    axes[1].legend(loc="upper right", fontsize=8)

    osc_t = np.arange(len(osc)) / osc_rate
    axes[2].plot(osc_t, osc[:, 0] if osc.ndim > 1 else osc, lw=0.3, color="tab:green")
    axes[2].set_ylabel("oscillator")
    axes[2].set_xlabel("time [s]")

    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
