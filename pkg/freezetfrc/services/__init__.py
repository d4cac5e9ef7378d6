"""Services package: rate control, freeze extension and the analytic model."""
