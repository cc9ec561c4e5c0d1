"""Published real-data results used as arithmetic fixtures.

Each quadruple is ``(mAP@0.25, mAP@0.5, FNR, FDR)``; fitness values are the published
three-decimal numbers. Datasets are ``"R1"`` and ``"R2"``; resolutions are crop sides.
"""
from __future__ import annotations

Quad = tuple[float, float, float, float]


def _parse(text: str, n_key: int, with_fitness: bool):
    """Rows of ``key... R1 values R2 values`` -> {(key..., dataset): (quad, fitness|None)}."""
    out = {}
    width = 5 if with_fitness else 4
    for line in text.strip().splitlines():
        parts = line.split()
        key = tuple(int(p) if p.isdigit() else p for p in parts[:n_key])
        vals = [float(v) for v in parts[n_key:]]
        assert len(vals) == 2 * width, line
        for d, chunk in (("R1", vals[:width]), ("R2", vals[width:])):
            quad = tuple(chunk[:4])
            out[key + (d,)] = (quad, chunk[4] if with_fitness else None)
    return out


# model, training data, crop -> metrics (no fitness column published)
TRAINING_DATA = _parse("""
yolov5l S1      2040 0.572 0.551 0.463 0.500  0.571 0.432 0.745 0.290
yolov5l SDV+DUT 2040 0.847 0.826 0.241 0.025  0.829 0.692 0.376 0.025
yolov5l S1      1080 0.568 0.548 0.457 0.261  0.685 0.270 0.473 0.029
yolov5l SDV+DUT 1080 0.861 0.819 0.199 0.073  0.805 0.645 0.440 0.038
yolov5l S1      640  0.433 0.401 0.601 0.311  0.102 0.047 0.858 0.638
yolov5l SDV+DUT 640  0.747 0.684 0.345 0.040  0.574 0.408 0.647 0.047
feder   S1      1080 0.708 0.636 0.449 0.066  0.816 0.423 0.335 0.007
feder   SDV+DUT 1080 0.848 0.832 0.205 0.166  0.946 0.774 0.139 0.011
feder   S1      640  0.729 0.669 0.372 0.114  0.685 0.270 0.473 0.029
feder   SDV+DUT 640  0.879 0.852 0.197 0.045  0.946 0.762 0.146 0.018
""", 3, False)

# crop, fusion config -> metrics + fitness (YOLOv5l backbone, SDV+DUT training)
FUSION_CONFIGS = _parse("""
1080 1 0.848 0.832 0.205 0.166 0.818  0.946 0.774 0.139 0.011 0.906
1080 2 0.837 0.819 0.210 0.221 0.794  0.953 0.790 0.143 0.011 0.906
1080 3 0.839 0.821 0.228 0.179 0.801  0.946 0.788 0.148 0.009 0.904
1080 4 0.853 0.835 0.220 0.094 0.837  0.962 0.828 0.092 0.013 0.933
1080 5 0.816 0.800 0.225 0.294 0.758  0.937 0.755 0.155 0.012 0.895
1080 6 0.834 0.819 0.224 0.219 0.788  0.935 0.750 0.162 0.015 0.890
640  1 0.879 0.852 0.197 0.045 0.869  0.946 0.762 0.146 0.018 0.899
640  2 0.858 0.832 0.213 0.112 0.834  0.953 0.798 0.156 0.007 0.903
640  3 0.838 0.813 0.244 0.068 0.832  0.948 0.788 0.154 0.009 0.901
640  4 0.853 0.830 0.229 0.055 0.846  0.944 0.804 0.121 0.026 0.911
640  5 0.851 0.830 0.233 0.077 0.836  0.921 0.759 0.025 0.005 0.955
640  6 0.853 0.832 0.220 0.089 0.838  0.912 0.730 0.166 0.070 0.865
""", 2, True)

# crop, backbone -> metrics + fitness (fusion config 4)
BACKBONES = _parse("""
1080 v5l  0.853 0.835 0.220 0.094 0.837  0.962 0.828 0.092 0.013 0.933
1080 v8m  0.838 0.824 0.208 0.258 0.783  0.959 0.817 0.112 0.008 0.924
1080 v8l  0.872 0.852 0.192 0.049 0.869  0.967 0.810 0.107 0.012 0.925
1080 v9c  0.815 0.795 0.235 0.184 0.791  0.953 0.802 0.092 0.020 0.927
1080 v9e  0.852 0.838 0.215 0.086 0.842  0.940 0.800 0.109 0.024 0.917
1080 v11l 0.828 0.808 0.293 0.029 0.822  0.896 0.760 0.138 0.163 0.847
1080 v11x 0.803 0.777 0.333 0.013 0.804  0.938 0.784 0.110 0.071 0.898
640  v5l  0.853 0.830 0.229 0.055 0.846  0.944 0.804 0.121 0.026 0.911
640  v8m  0.836 0.813 0.211 0.173 0.809  0.949 0.710 0.113 0.039 0.901
640  v8l  0.876 0.848 0.188 0.116 0.847  0.967 0.798 0.082 0.019 0.933
640  v9c  0.830 0.806 0.242 0.095 0.822  0.959 0.806 0.111 0.007 0.924
640  v9e  0.863 0.842 0.179 0.173 0.829  0.943 0.770 0.105 0.040 0.910
640  v11l 0.847 0.822 0.250 0.040 0.840  0.883 0.723 0.166 0.097 0.852
640  v11x 0.819 0.794 0.268 0.064 0.818  0.935 0.754 0.102 0.078 0.896
""", 2, True)

# same as BACKBONES, but only objects of at least 16x16 px in both predictions and ground truth
BACKBONES_SIZE_FILTERED = _parse("""
1080 v5l  0.881 0.877 0.223 0.016 0.870  0.927 0.798 0.139 0.010 0.906
1080 v8m  0.896 0.889 0.184 0.067 0.872  0.940 0.825 0.118 0.008 0.921
1080 v8l  0.914 0.905 0.159 0.017 0.904  0.942 0.811 0.111 0.012 0.921
1080 v9c  0.875 0.868 0.235 0.018 0.862  0.946 0.839 0.103 0.009 0.929
1080 v9e  0.890 0.887 0.186 0.075 0.868  0.937 0.838 0.115 0.024 0.917
1080 v11l 0.876 0.864 0.220 0.028 0.865  0.890 0.786 0.138 0.163 0.849
1080 v11x 0.852 0.842 0.272 0.011 0.843  0.929 0.821 0.117 0.070 0.898
640  v5l  0.882 0.876 0.227 0.009 0.870  0.911 0.770 0.111 0.012 0.914
640  v8m  0.936 0.761 0.115 0.028 0.908  0.936 0.761 0.115 0.029 0.908
640  v8l  0.896 0.884 0.202 0.009 0.884  0.955 0.822 0.085 0.009 0.936
640  v9c  0.871 0.863 0.252 0.005 0.858  0.942 0.834 0.113 0.007 0.924
640  v9e  0.911 0.902 0.164 0.028 0.898  0.941 0.810 0.106 0.039 0.914
640  v11l 0.893 0.883 0.196 0.014 0.885  0.874 0.760 0.165 0.090 0.858
640  v11x 0.880 0.870 0.227 0.015 0.868  0.936 0.809 0.103 0.061 0.907
""", 2, True)

# crop, box-loss weight w1 -> metrics + fitness (w1 written x100 to keep keys integral)
_BOX = _parse("""
1080 750 0.820 0.805 0.247 0.220 0.774  0.931 0.755 0.183 0.010 0.883
1080 600 0.793 0.777 0.249 0.299 0.740  0.922 0.730 0.186 0.014 0.877
1080 450 0.834 0.817 0.242 0.162 0.800  0.933 0.747 0.192 0.009 0.879
1080 300 0.813 0.796 0.259 0.225 0.766  0.938 0.792 0.143 0.008 0.906
1080 150 0.849 0.828 0.226 0.073 0.841  0.937 0.749 0.164 0.016 0.889
1080 125 0.824 0.804 0.229 0.218 0.784  0.930 0.746 0.181 0.011 0.882
1080 100 0.844 0.826 0.208 0.175 0.812  0.949 0.788 0.121 0.019 0.913
1080 75  0.827 0.808 0.233 0.174 0.798  0.944 0.760 0.153 0.016 0.896
1080 50  0.854 0.833 0.229 0.077 0.839  0.937 0.771 0.144 0.021 0.899
1080 25  0.843 0.825 0.238 0.078 0.832  0.941 0.770 0.168 0.011 0.892
1080 20  0.839 0.821 0.216 0.147 0.817  0.953 0.778 0.134 0.012 0.909
1080 15  0.839 0.822 0.217 0.206 0.796  0.939 0.763 0.142 0.013 0.902
1080 10  0.848 0.832 0.205 0.166 0.818  0.946 0.774 0.139 0.011 0.906
1080 5   0.840 0.821 0.237 0.103 0.823  0.952 0.784 0.122 0.012 0.915
640  750 0.848 0.822 0.234 0.082 0.833  0.945 0.762 0.141 0.013 0.903
640  600 0.821 0.789 0.256 0.111 0.807  0.908 0.722 0.212 0.032 0.856
640  450 0.852 0.827 0.232 0.077 0.837  0.938 0.764 0.176 0.020 0.884
640  300 0.833 0.803 0.258 0.071 0.823  0.939 0.789 0.143 0.019 0.902
640  150 0.864 0.836 0.215 0.056 0.854  0.931 0.742 0.167 0.027 0.883
640  125 0.871 0.845 0.213 0.067 0.852  0.942 0.761 0.147 0.025 0.895
640  100 0.861 0.834 0.211 0.097 0.841  0.950 0.776 0.127 0.024 0.907
640  75  0.852 0.826 0.235 0.086 0.832  0.942 0.787 0.139 0.037 0.897
640  50  0.867 0.843 0.219 0.064 0.850  0.944 0.785 0.121 0.037 0.906
640  25  0.855 0.832 0.235 0.051 0.845  0.938 0.789 0.205 0.012 0.876
640  20  0.867 0.838 0.204 0.076 0.852  0.944 0.777 0.147 0.019 0.899
640  15  0.843 0.821 0.234 0.126 0.817  0.939 0.791 0.164 0.020 0.892
640  10  0.879 0.852 0.197 0.045 0.869  0.946 0.762 0.146 0.018 0.899
640  5   0.861 0.833 0.215 0.087 0.842  0.948 0.769 0.127 0.021 0.907
""", 2, True)
BOX_WEIGHT_RESULTS = {(crop, w / 100, d): v for (crop, w, d), v in _BOX.items()}

# w1 -> fitness averaged over both crops and both datasets
BOX_WEIGHT_AVG_FITNESS = dict(zip(
    (7.5, 6.0, 4.5, 3.0, 1.5, 1.25, 1.0, 0.75, 0.5, 0.25, 0.2, 0.15, 0.1, 0.05),
    (0.848, 0.820, 0.850, 0.849, 0.867, 0.853, 0.868, 0.856, 0.873, 0.861, 0.869, 0.852, 0.873, 0.872),
))

# weight preset (mAP25, mAP50, FNR, FDR) -> average fitness per fusion config 1..6
SENSITIVITY_AVERAGES = {
    (0.025, 0.025, 0.50, 0.45): (0.880, 0.863, 0.866, 0.889, 0.868, 0.851),
    (0.05, 0.05, 0.50, 0.40): (0.876, 0.860, 0.862, 0.885, 0.865, 0.848),
    (0.10, 0.10, 0.45, 0.35): (0.873, 0.859, 0.859, 0.882, 0.861, 0.845),
    (0.15, 0.15, 0.40, 0.30): (0.870, 0.858, 0.857, 0.879, 0.857, 0.843),
    (0.20, 0.20, 0.35, 0.25): (0.867, 0.857, 0.855, 0.876, 0.853, 0.841),
}

LEDGER_STEPS = ("optimized training data", "fusion config 4", "v8l backbone")

# (crop, dataset) -> baseline quad, per-step delta quads, published total
LEDGER_PUBLISHED = {
    (1080, "R1"): {"baseline": (0.708, 0.636, 0.449, 0.066),
                   "steps": [(0.140, 0.196, -0.244, 0.100), (0.005, 0.003, 0.015, -0.072), (0.019, 0.017, -0.028, -0.045)],
                   "total": (0.164, 0.216, -0.257, -0.017)},
    (1080, "R2"): {"baseline": (0.816, 0.423, 0.335, 0.007),
                   "steps": [(0.130, 0.351, -0.196, 0.003), (0.016, 0.054, -0.047, 0.003), (-0.005, -0.018, 0.015, -0.008)],
                   "total": (0.151, 0.387, -0.228, -0.002)},
    (640, "R1"): {"baseline": (0.729, 0.669, 0.372, 0.114),
                  "steps": [(0.150, 0.183, -0.175, -0.069), (-0.026, -0.022, 0.032, 0.010), (0.023, 0.018, -0.041, 0.061)],
                  "total": (0.147, 0.179, -0.184, 0.002)},
    (640, "R2"): {"baseline": (0.685, 0.270, 0.473, 0.029),
                  "steps": [(0.261, 0.492, -0.327, -0.011), (-0.002, 0.142, -0.025, 0.008), (0.023, -0.006, -0.039, -0.007)],
                  "total": (0.282, 0.628, -0.391, -0.010)},
}


def quad(table: dict, *key) -> Quad:
    return table[key][0]


def ledger_stages(crop: int, dataset: str) -> list[Quad]:
    """Absolute metrics of the four ledger configurations, each taken from its source table.

    Baseline: FEDER fusion trained on S1; then SDV+DUT training (fusion config 1);
    then fusion config 4; then the v8l backbone.
    """
    return [
        quad(TRAINING_DATA, "feder", "S1", crop, dataset),
        quad(TRAINING_DATA, "feder", "SDV+DUT", crop, dataset),
        quad(FUSION_CONFIGS, crop, 4, dataset),
        quad(BACKBONES, crop, "v8l", dataset),
    ]
