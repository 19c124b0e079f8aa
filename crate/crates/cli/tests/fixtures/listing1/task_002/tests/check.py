import pandas as pd

pred = pd.read_csv("pred_results/sol.csv")
assert pred["logS"].corr(pd.read_csv("tests/gold.csv")["logS"]) > 0.8
