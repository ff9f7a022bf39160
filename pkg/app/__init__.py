# qplane - quantum complex plane verification workbench
