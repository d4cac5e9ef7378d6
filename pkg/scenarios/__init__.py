"""
Built-in technology profiles, handover/fairness scenario builders and trace metrics.
"""
