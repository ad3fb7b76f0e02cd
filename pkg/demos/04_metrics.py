# %% [markdown]
# # Frame-level AP and accuracy
#
# Every frame from every evaluated track is pooled. AP is the mean of
# precision@k over the ranks k that hold a positive (ties keep input
# order); accuracy thresholds the score at 0.5, where exactly 0.5 counts as
# "not looking".

# %%
from lamlstm.metrics import average_precision, top1_accuracy

print(average_precision([0.9, 0.8, 0.7], [0, 0, 1]))       # 1/3
print(average_precision([0.4, 0.3, 0.2, 0.1], [1, 0, 1, 0]))  # (1 + 2/3) / 2
print(top1_accuracy([0.5, 0.6, 0.4], [0, 1, 1]))

# %% [markdown]
# AP depends on the ranking only: any strictly increasing transform of the
# scores leaves it unchanged, while accuracy moves with the threshold.

# %%
import numpy as np

s = np.array([0.1, 0.35, 0.6, 0.8, 0.55])
y = np.array([0, 1, 1, 1, 0])
print(average_precision(s, y), average_precision(s ** 4, y))
print(top1_accuracy(s, y), top1_accuracy(s ** 4, y))
