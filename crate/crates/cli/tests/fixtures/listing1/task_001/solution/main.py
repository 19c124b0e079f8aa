import pandas as pd

df = pd.read_csv("data/cells.csv")
df.groupby("cluster")["expr"].mean().rename("mean").to_csv("pred_results/output.csv")
